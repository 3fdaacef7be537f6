use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::Penguin;
use crate::tensor::{Float, Tensor};

/// Anything that maps `[B, L, C]` look-back windows to `[B, H, C]` forecasts.
pub trait Forecaster<T: Float> {
    fn predict_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Float> Forecaster<T> for Penguin<T> {
    fn predict_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(x)
    }
}

impl<T: Float, F: Fn(&Tensor<T>) -> Result<Tensor<T>>> Forecaster<T> for F {
    fn predict_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self(x)
    }
}

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over every sample, horizon step and channel.
    pub mse: f64,
    pub mae: f64,
    /// MSE at each horizon step, averaged over samples and channels.
    pub mse_per_step: Vec<f64>,
    pub samples: usize,
    pub seconds_per_batch: f64,
}

struct Accum {
    sq: Neumaier,
    abs: Neumaier,
    per_step: Vec<Neumaier>,
    samples: usize,
    channels: usize,
}

impl Accum {
    fn new(horizon: usize, channels: usize) -> Self {
        Self {
            sq: Neumaier::default(),
            abs: Neumaier::default(),
            per_step: vec![Neumaier::default(); horizon],
            samples: 0,
            channels,
        }
    }

    fn push<T: Float>(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::Data(format!(
                "forecast {:?} does not match target {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        let (h, c) = (self.per_step.len(), self.channels);
        for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
            let e = p.as_f64() - t.as_f64();
            self.sq.add(e * e);
            self.abs.add(e.abs());
            self.per_step[(i / c) % h].add(e * e);
        }
        self.samples += pred.numel() / (h * c);
        Ok(())
    }

    fn finish(self, seconds_per_batch: f64) -> Result<EvalReport> {
        if self.samples == 0 {
            return Err(Error::Data("cannot evaluate on an empty split".into()));
        }
        let h = self.per_step.len();
        let n = (self.samples * h * self.channels) as f64;
        let per = (self.samples * self.channels) as f64;
        Ok(EvalReport {
            mse: self.sq.total() / n,
            mae: self.abs.total() / n,
            mse_per_step: self.per_step.iter().map(|s| s.total() / per).collect(),
            samples: self.samples,
            seconds_per_batch,
        })
    }
}

/// Score a forecaster on every window of `ds`, in order.
pub fn evaluate<T: Float, F: Forecaster<T> + ?Sized>(model: &F, ds: &WindowedDataset<T>, batch_size: usize) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let mut acc = Accum::new(ds.horizon(), ds.channels());
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut seconds = 0.0;
    let mut batches = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = ds.batch(chunk)?;
        let t0 = Instant::now();
        let pred = model.predict_batch(&x)?;
        seconds += t0.elapsed().as_secs_f64();
        batches += 1;
        acc.push(&pred, &y)?;
    }
    acc.finish(seconds / batches as f64)
}

/// Metrics for precomputed `[B, H, C]` forecasts.
pub fn evaluate_predictions<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<EvalReport> {
    let s = target.shape();
    if s.len() != 3 {
        return Err(Error::Data(format!("targets must be [B, H, C], got {s:?}")));
    }
    let mut acc = Accum::new(s[1], s[2]);
    acc.push(pred, target)?;
    acc.finish(0.0)
}
