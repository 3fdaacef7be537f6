use std::time::Instant;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::Penguin;
use crate::tensor::Float;

use super::{train_step, Adam, TrainConfig};

/// Median of a sample; `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wall-clock seconds of `iters` full training steps (forward, backward and
/// optimizer update) on the first batch of `ds`, after `warmup` untimed ones.
pub fn time_train_steps<T: Float>(
    model: &Penguin<T>,
    ds: &WindowedDataset<T>,
    cfg: &TrainConfig,
    warmup: usize,
    iters: usize,
) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::Data("timing needs at least one window".into()));
    }
    let idx: Vec<usize> = (0..cfg.batch_size.min(ds.len())).collect();
    let (x, y) = ds.batch(&idx)?;
    let mut model = model.clone();
    let mut opt = Adam::new(cfg, model.params().tensors());
    let mut times = Vec::with_capacity(iters);
    for i in 0..warmup + iters {
        let t0 = Instant::now();
        train_step(&mut model, &mut opt, &x, &y, None)?;
        if i >= warmup {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(times)
}
