//! Finite-difference audit of the analytic gradients, one parameter block at a time.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mse_loss_var, Penguin, PenguinConfig};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub batch: usize,
    /// Central-difference step.
    pub step: f64,
    pub threshold: f64,
    /// Entries checked per block, spread evenly; `None` checks all of them.
    pub max_entries: Option<usize>,
    /// Multiply the analytic gradient of the named block by this factor
    /// before comparing. Used to show the check can fail.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 2,
            step: 1e-5,
            threshold: 1e-4,
            max_entries: None,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub entries: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.blocks.iter().map(|b| b.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>7}  {:>12}  status", "block", "checked", "max rel err")?;
        for b in &self.blocks {
            let status = if b.passed { "ok" } else { "FAIL" };
            writeln!(f, "{:<width$}  {:>7}  {:>12.3e}  {status}", b.name, b.checked, b.max_rel_error)?;
        }
        write!(f, "threshold {:.0e}: {}", self.threshold, if self.passed() { "all blocks pass" } else { "some blocks fail" })
    }
}

/// Symmetric relative error with an absolute floor so that entries whose
/// true gradient is numerically zero do not dominate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn loss(model: &Penguin<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let pred = model.predict(x)?;
    let s = y.shape();
    let sq: f64 = pred.data().iter().zip(y.data()).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(sq / (s[0] * s[1]) as f64)
}

fn entries(n: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

/// Compare backpropagated gradients of the training loss against central
/// differences for every parameter block of a freshly initialised model.
pub fn gradcheck(config: &PenguinConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if config.attn_dropout > 0.0 {
        return Err(Error::Config("gradient check needs attention dropout disabled".into()));
    }
    if opts.batch == 0 || !(opts.step > 0.0) {
        return Err(Error::Config("gradient check needs a positive batch and step".into()));
    }
    let model = Penguin::<f64>::new(config.clone(), opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let (b, l, h, c) = (opts.batch, config.lookback, config.horizon, config.channels);
    let x = Tensor::new(vec![b, l, c], (0..b * l * c).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let y = Tensor::new(vec![b, h, c], (0..b * h * c).map(|_| rng.random_range(-2.0..2.0)).collect())?;

    let tape = Tape::new();
    let bound = model.bind(&tape);
    let grads = mse_loss_var(&model.forward_bound(&bound, &x, None)?, &y)?.backward()?;
    let names: Vec<String> = model.params().names().to_vec();
    if let Some((name, _)) = &opts.corrupt {
        if !names.contains(name) {
            return Err(Error::Config(format!("no parameter block named '{name}'")));
        }
    }

    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let mut analytic = grads.slice(&bound.vars()[i]).expect("parameters are leaves").to_vec();
        if let Some((target, factor)) = &opts.corrupt {
            if target == name {
                analytic.iter_mut().for_each(|g| *g *= factor);
            }
        }
        let idx = entries(analytic.len(), opts.max_entries);
        let mut worst: f64 = 0.0;
        for &j in &idx {
            let orig = probe.params().tensors()[i].data()[j];
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig + opts.step;
            let up = loss(&probe, &x, &y)?;
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig - opts.step;
            let down = loss(&probe, &x, &y)?;
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
        blocks.push(BlockError {
            name: name.clone(),
            entries: analytic.len(),
            checked: idx.len(),
            max_rel_error: worst,
            passed: worst < opts.threshold,
        });
    }
    Ok(GradcheckReport {
        threshold: opts.threshold,
        blocks,
    })
}
