//! The forecaster: RevIN, patching, embedding, encoder stack and linear head.
//!
//! Channels are folded into the batch, so one set of weights serves every
//! channel and no operation ever mixes them.

mod checkpoint;
mod config;
mod loss;
mod params;
mod patch;
mod revin;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, ManifestEntry};
pub use config::{AttentionKind, PenguinConfig};
pub use loss::{mae, mse_fully_averaged, mse_loss, mse_loss_var};
pub use params::{param_layout, ParamStore, LAYER_PARAMS};
pub use patch::{n_patches, patchify};
pub use revin::{revin_denormalize, revin_normalize, RevinState};

use crate::attention::{mha_reference, penguin_attention, penguin_attention_traced, AttentionBias, AttentionTrace, AttnWeights, Dropout};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// One encoder layer's parameters bound to a tape.
pub struct LayerVars<'a, T: Float> {
    pub w_q: &'a Var<T>,
    pub w_k: &'a Var<T>,
    pub w_v: &'a Var<T>,
    pub w_o: &'a Var<T>,
    pub gamma1: &'a Var<T>,
    pub w1: &'a Var<T>,
    pub b1: &'a Var<T>,
    pub w2: &'a Var<T>,
    pub b2: &'a Var<T>,
    pub gamma2: &'a Var<T>,
}

impl<'a, T: Float> LayerVars<'a, T> {
    fn from_slice(v: &'a [Var<T>]) -> Self {
        Self {
            w_q: &v[0],
            w_k: &v[1],
            w_v: &v[2],
            w_o: &v[3],
            gamma1: &v[4],
            w1: &v[5],
            b1: &v[6],
            w2: &v[7],
            b2: &v[8],
            gamma2: &v[9],
        }
    }
}

/// `x₁ = x + RMSNorm(attn(x))·γ₁`, then `x₂ = x₁ + RMSNorm(FFN(x₁))·γ₂`.
pub fn encoder_layer<T: Float>(
    x: &Var<T>,
    p: &LayerVars<'_, T>,
    bias: &AttentionBias<T>,
    kind: AttentionKind,
    eps: f64,
    dropout: Option<&mut Dropout>,
    trace: Option<&mut Vec<AttentionTrace<T>>>,
) -> Result<Var<T>> {
    let w = AttnWeights {
        w_q: p.w_q,
        w_k: p.w_k,
        w_v: p.w_v,
        w_o: p.w_o,
    };
    let attn = match (kind, trace) {
        (AttentionKind::Mha, _) => mha_reference(x, &w, bias)?,
        (AttentionKind::Gqa, Some(sink)) => {
            let (out, t) = penguin_attention_traced(x, &w, bias)?;
            sink.push(t);
            out
        }
        (AttentionKind::Gqa, None) => penguin_attention(x, &w, bias, dropout)?,
    };
    let x1 = x.add(&attn.rms_norm_lastdim(eps)?.mul_tiled(p.gamma1)?)?;
    let ffn = x1
        .matmul(p.w1)?
        .add_tiled(p.b1)?
        .relu()?
        .matmul(p.w2)?
        .add_tiled(p.b2)?;
    Ok(x1.add(&ffn.rms_norm_lastdim(eps)?.mul_tiled(p.gamma2)?)?)
}

/// Parameters bound as tape leaves, in storage order.
pub struct Bound<T: Float> {
    vars: Vec<Var<T>>,
}

impl<T: Float> Bound<T> {
    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

/// Normalized patches and the statistics needed to undo RevIN.
struct Prepared<T: Float> {
    patches: Tensor<T>,
    mean: Tensor<T>,
    scale: Tensor<T>,
    batch: usize,
}

#[derive(Clone, Debug)]
pub struct Penguin<T: Float = f64> {
    config: PenguinConfig,
    params: ParamStore<T>,
    bias: AttentionBias<T>,
}

impl<T: Float> Penguin<T> {
    pub fn new(config: PenguinConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: PenguinConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = param_layout(&config)?;
        let matches = expected.len() == params.len()
            && expected
                .iter()
                .zip(params.iter())
                .all(|((n, s), (pn, t))| n == pn && s.as_slice() == t.shape());
        if !matches {
            return Err(Error::Config("parameters do not match the configuration".into()));
        }
        let bias = AttentionBias::new(&config.bias_stack()?, config.causal)?;
        Ok(Self { config, params, bias })
    }

    pub fn config(&self) -> &PenguinConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn attention_bias(&self) -> &AttentionBias<T> {
        &self.bias
    }

    /// Binds every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.params.tensors().iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    fn bind_constant(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.params.tensors().iter().map(|t| tape.constant(t)).collect(),
        }
    }

    fn prepare(&self, x: &Tensor<T>) -> Result<Prepared<T>> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 3 || s[1] != c.lookback || s[2] != c.channels {
            return Err(Error::Data(format!(
                "expected input [batch, {}, {}], got {s:?}",
                c.lookback, c.channels
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("input window contains non-finite values".into()));
        }
        let (b, l, ch) = (s[0], s[1], s[2]);
        let d = x.data();
        let n = c.n_patches();
        let mut patches = Vec::with_capacity(b * ch * n * c.patch_len);
        let mut mean = Vec::with_capacity(b * ch * c.horizon);
        let mut scale = Vec::with_capacity(b * ch * c.horizon);
        let mut series = Vec::with_capacity(l);
        for bi in 0..b {
            let window = &d[bi * l * ch..(bi + 1) * l * ch];
            for cc in 0..ch {
                let (m, sd) = revin::column_stats((0..l).map(|t| window[t * ch + cc]), c.eps);
                series.clear();
                series.extend((0..l).map(|t| T::of((window[t * ch + cc].as_f64() - m) / sd)));
                patch::patch_into(&series, c.patch_len, c.stride, &mut patches)?;
                mean.extend(std::iter::repeat_n(T::of(m), c.horizon));
                scale.extend(std::iter::repeat_n(T::of(sd), c.horizon));
            }
        }
        let rows = b * ch;
        Ok(Prepared {
            patches: Tensor::new(vec![rows, n, c.patch_len], patches)?,
            mean: Tensor::new(vec![rows, c.horizon], mean)?,
            scale: Tensor::new(vec![rows, c.horizon], scale)?,
            batch: b,
        })
    }

    fn run(
        &self,
        bound: &Bound<T>,
        x: &Tensor<T>,
        mut dropout: Option<&mut Dropout>,
        mut trace: Option<&mut Vec<AttentionTrace<T>>>,
    ) -> Result<Var<T>> {
        let c = &self.config;
        let prep = self.prepare(x)?;
        let v = &bound.vars;
        let tape = v[0].tape();
        let rows = prep.patches.shape()[0];
        let n = c.n_patches();
        let mut h = tape
            .constant(&prep.patches)
            .matmul(&v[0])?
            .add_tiled(&v[1])?
            .add_tiled(&v[2])?;
        for l in 0..c.layers {
            let base = 3 + l * LAYER_PARAMS.len();
            let layer = LayerVars::from_slice(&v[base..base + LAYER_PARAMS.len()]);
            h = encoder_layer(
                &h,
                &layer,
                &self.bias,
                c.attention,
                c.eps,
                dropout.as_deref_mut(),
                trace.as_deref_mut(),
            )?;
        }
        let head = 3 + c.layers * LAYER_PARAMS.len();
        let y = h
            .reshape(vec![rows, n * c.d_model])?
            .matmul(&v[head])?
            .add_tiled(&v[head + 1])?
            .mul(&tape.constant(&prep.scale))?
            .add(&tape.constant(&prep.mean))?;
        Ok(y.reshape(vec![prep.batch, c.channels, c.horizon])?.transpose_last2()?)
    }

    /// Differentiable forward over `x: [B, L, C]`, returning `[B, H, C]`.
    pub fn forward_bound(&self, bound: &Bound<T>, x: &Tensor<T>, dropout: Option<&mut Dropout>) -> Result<Var<T>> {
        self.run(bound, x, dropout, None)
    }

    /// Inference over a batch `[B, L, C]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.bind_constant(&tape);
        Ok(self.run(&bound, x, None, None)?.value())
    }

    /// Inference on one window `[L, C]`, returning `[H, C]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape().to_vec();
        let batched = x.reshape([vec![1], s].concat()).map_err(|_| {
            Error::Data(format!("expected a [L, C] window, got {:?}", x.shape()))
        })?;
        let y = self.predict(&batched)?;
        Ok(y.reshape(vec![self.config.horizon, self.config.channels])?)
    }

    /// Inference that also returns post-softmax weights per layer.
    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<AttentionTrace<T>>)> {
        if self.config.attention != AttentionKind::Gqa {
            return Err(Error::Config("attention tracing needs grouped attention".into()));
        }
        let tape = Tape::new();
        let bound = self.bind_constant(&tape);
        let mut traces = Vec::with_capacity(self.config.layers);
        let y = self.run(&bound, x, None, Some(&mut traces))?;
        Ok((y.value(), traces))
    }
}

#[cfg(test)]
mod tests;
