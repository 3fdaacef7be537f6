use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bias::{encoder_stack, group_kinds, BiasStack, PeriodSet, Regime};
use crate::error::{Error, Result};
use crate::tensor::Precision;

use super::patch::n_patches;

/// How keys and values are shared across heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// One key/value projection per group.
    #[default]
    Gqa,
    /// One key/value projection per head, computed head by head.
    Mha,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Gqa => "gqa",
            AttentionKind::Mha => "mha",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gqa" => Ok(AttentionKind::Gqa),
            "mha" => Ok(AttentionKind::Mha),
            other => Err(format!("unknown attention kind '{other}' (expected gqa or mha)")),
        }
    }
}

/// Model hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenguinConfig {
    /// Look-back length `L` in timesteps.
    pub lookback: usize,
    /// Forecast horizon `H` in timesteps.
    pub horizon: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub regime: Regime,
    /// Raw periods in timesteps; each must be a multiple of `stride`.
    pub periods: Vec<usize>,
    pub causal: bool,
    pub eps: f64,
    pub precision: Precision,
    pub attention: AttentionKind,
    pub attn_dropout: f64,
}

impl Default for PenguinConfig {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 96,
            channels: 1,
            patch_len: 16,
            stride: 8,
            d_model: 128,
            d_ff: 256,
            heads: 12,
            layers: 2,
            regime: Regime::Both,
            periods: vec![24, 168],
            causal: true,
            eps: 1e-5,
            precision: Precision::F64,
            attention: AttentionKind::Gqa,
            attn_dropout: 0.0,
        }
    }
}

impl PenguinConfig {
    /// A model small enough for finite-difference checks and quick demos.
    pub fn tiny() -> Self {
        Self {
            lookback: 16,
            horizon: 4,
            channels: 2,
            patch_len: 4,
            stride: 2,
            d_model: 8,
            d_ff: 16,
            heads: 4,
            layers: 1,
            regime: Regime::Both,
            periods: vec![6],
            ..Default::default()
        }
    }

    /// Token count `N = ⌊(L−P)/S⌋ + 2`.
    pub fn n_patches(&self) -> usize {
        n_patches(self.lookback, self.patch_len, self.stride).unwrap_or(0)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn period_set(&self) -> Result<PeriodSet> {
        Ok(PeriodSet::new(&self.periods, self.stride)?)
    }

    /// Number of attention groups implied by the regime and periods.
    pub fn groups(&self) -> Result<usize> {
        Ok(group_kinds(self.regime, &self.period_set()?)?.len())
    }

    /// Key/value heads actually stored: `g` for grouped, `h` for the reference.
    pub fn kv_heads(&self) -> Result<usize> {
        Ok(match self.attention {
            AttentionKind::Gqa => self.groups()?,
            AttentionKind::Mha => self.heads,
        })
    }

    pub fn bias_stack(&self) -> Result<BiasStack> {
        Ok(encoder_stack(self.regime, &self.period_set()?, self.heads, self.n_patches())?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("layers", self.layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.stride > self.patch_len {
            return Err(Error::Config(format!(
                "stride {} exceeds patch length {}",
                self.stride, self.patch_len
            )));
        }
        if self.patch_len > self.lookback {
            return Err(Error::Config(format!(
                "patch length {} exceeds look-back {}",
                self.patch_len, self.lookback
            )));
        }
        if self.d_model < self.heads {
            return Err(Error::Config(format!(
                "d_model {} is smaller than the head count {}",
                self.d_model, self.heads
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return Err(Error::Config("attn_dropout must lie in [0, 1)".into()));
        }
        self.bias_stack()?;
        Ok(())
    }
}
