//! Optimizer, training loop, evaluation and experiment harnesses.

mod adam;
mod eval;
mod manifest;
mod sweep;
mod timing;

pub use adam::Adam;
pub use eval::{evaluate, evaluate_predictions, EvalReport, Forecaster, Neumaier};
pub use manifest::{config_hash, RunManifest};
pub use sweep::{ablation_sweep, summarize, worker_threads, write_sweep_csv, SweepCell, SweepResult, SweepSummary};
pub use timing::{median, time_train_steps};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Dropout;
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::{mse_loss_var, Penguin};
use crate::tensor::{Float, Tape, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cap on optimizer steps per epoch; `None` sweeps every window.
    pub max_batches_per_epoch: Option<usize>,
    /// Batch size used for validation and test passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_batches_per_epoch: None,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience cannot exceed max_epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.max_batches_per_epoch == Some(0) {
            return bad("max_batches_per_epoch must be positive when set");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    /// Best validation MSE, or best train loss when there is no validation set.
    pub best_score: f64,
    pub stopped_early: bool,
    pub seconds_per_step: f64,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_mse,seconds\n");
        for e in &self.epochs {
            let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{:.6}\n", e.epoch, e.train_loss, val, e.seconds));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// One optimizer step on a batch. Returns the loss before the update.
pub fn train_step<T: Float>(
    model: &mut Penguin<T>,
    opt: &mut Adam,
    x: &crate::tensor::Tensor<T>,
    y: &crate::tensor::Tensor<T>,
    dropout: Option<&mut Dropout>,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let loss = mse_loss_var(&model.forward_bound(&bound, x, dropout)?, y)?;
    let value = loss.value().item().map(|v| v.as_f64()).unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grads = loss.backward().map_err(|e| match e {
        TensorError::NonFinite { .. } => Error::Numeric("non-finite gradient".into()),
        other => other.into(),
    })?;
    let slices: Vec<&[T]> = bound
        .vars()
        .iter()
        .map(|v| grads.slice(v).expect("every parameter is a leaf on this tape"))
        .collect();
    opt.step(model.params_mut().tensors_mut(), &slices);
    Ok(value)
}

/// Adam on the batch objective with shuffled mini-batches and early stopping.
///
/// The parameters with the best validation MSE (or train loss when `val` is
/// empty) are restored at the end. A non-finite loss aborts with
/// [`Error::Diverged`] after restoring the best parameters seen so far.
pub fn train<T: Float>(
    model: &mut Penguin<T>,
    train_set: &WindowedDataset<T>,
    val: Option<&WindowedDataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split has no windows".into()));
    }
    let val = val.filter(|v| !v.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg, model.params().tensors());
    let mut dropout = match model.config().attn_dropout {
        p if p > 0.0 => Some(Dropout::new(p, cfg.seed ^ 0x5eed)?),
        _ => None,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.params().clone();
    let mut history = TrainHistory {
        best_score: f64::INFINITY,
        ..Default::default()
    };
    let mut stale = 0;
    let mut step_time = 0.0;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.max_batches_per_epoch {
            batches.truncate(cap);
        }
        let mut total = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let (x, y) = train_set.batch(idx)?;
            let t0 = Instant::now();
            let loss = match train_step(model, &mut opt, &x, &y, dropout.as_mut()) {
                Ok(v) if model.params().is_finite() => v,
                Ok(_) | Err(Error::Numeric(_)) => {
                    *model.params_mut() = best;
                    return Err(Error::Diverged { epoch, step: step + 1 });
                }
                Err(e) => return Err(e),
            };
            step_time += t0.elapsed().as_secs_f64();
            total += loss;
            history.step_losses.push(loss);
        }
        let train_loss = total / batches.len() as f64;
        let val_mse = match val {
            Some(v) => Some(evaluate(&*model, v, cfg.eval_batch_size)?.mse),
            None => None,
        };
        let score = val_mse.unwrap_or(train_loss);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });
        if !score.is_finite() {
            *model.params_mut() = best;
            return Err(Error::Diverged {
                epoch,
                step: batches.len(),
            });
        }
        if score < history.best_score {
            history.best_score = score;
            history.best_epoch = epoch;
            best = model.params().clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    *model.params_mut() = best;
    history.seconds_per_step = step_time / history.step_losses.len().max(1) as f64;
    Ok(history)
}
