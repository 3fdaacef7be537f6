use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bias::Regime;
use crate::data::DataBundle;
use crate::error::{Error, Result};
use crate::model::{Penguin, PenguinConfig};
use crate::tensor::Float;

use super::{evaluate, median, train, TrainConfig};

/// Worker count: `PENGUIN_THREADS` if set, else the available cores.
pub fn worker_threads() -> usize {
    std::env::var("PENGUIN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepCell {
    pub regime: Regime,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub regime: Regime,
    /// Raw periods of the model, before patching.
    pub periods: Vec<usize>,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    pub seconds_per_step: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub regime: Regime,
    pub periods: Vec<usize>,
    pub runs: usize,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub sd: f64,
}

fn run_cell<T: Float>(base: &PenguinConfig, train_cfg: &TrainConfig, data: &DataBundle<T>, cell: SweepCell) -> Result<SweepResult> {
    let started = std::time::Instant::now();
    let config = PenguinConfig {
        regime: cell.regime,
        ..base.clone()
    };
    let cfg = TrainConfig {
        seed: cell.seed,
        ..train_cfg.clone()
    };
    let mut model = Penguin::<T>::new(config, cell.seed)?;
    let val = (!data.val.is_empty()).then_some(&data.val);
    let history = train(&mut model, &data.train, val, &cfg)?;
    let test = evaluate(&model, &data.test, cfg.eval_batch_size)?;
    Ok(SweepResult {
        regime: cell.regime,
        periods: base.periods.clone(),
        seed: cell.seed,
        best_epoch: history.best_epoch,
        val_mse: history.best_score,
        test_mse: test.mse,
        test_mae: test.mae,
        seconds_per_step: history.seconds_per_step,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Train and test one model per (regime, seed) pair on shared data.
///
/// Cells run on up to [`worker_threads`] threads; results come back in
/// regime-major order regardless of scheduling.
pub fn ablation_sweep<T: Float>(
    base: &PenguinConfig,
    train_cfg: &TrainConfig,
    data: &DataBundle<T>,
    regimes: &[Regime],
    seeds: &[u64],
) -> Result<Vec<SweepResult>> {
    let cells: Vec<SweepCell> = regimes
        .iter()
        .flat_map(|&regime| seeds.iter().map(move |&seed| SweepCell { regime, seed }))
        .collect();
    if cells.is_empty() {
        return Err(Error::Config("sweep needs at least one regime and one seed".into()));
    }
    let threads = worker_threads().min(cells.len());
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<SweepResult>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&cell) = cells.get(i) else { break };
                *slots[i].lock().unwrap() = Some(run_cell(base, train_cfg, data, cell));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every cell was scheduled"))
        .collect()
}

/// Test-MSE statistics per (regime, period set), in first-seen order.
pub fn summarize(results: &[SweepResult]) -> Vec<SweepSummary> {
    let mut order: Vec<(Regime, &[usize])> = Vec::new();
    for r in results {
        let key = (r.regime, r.periods.as_slice());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(regime, periods)| {
            let v: Vec<f64> = results
                .iter()
                .filter(|r| r.regime == regime && r.periods == periods)
                .map(|r| r.test_mse)
                .collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SweepSummary {
                regime,
                periods: periods.to_vec(),
                runs: v.len(),
                median: median(&v),
                mean,
                sd,
            }
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, results: &[SweepResult]) -> Result<()> {
    let mut out = String::from("regime,periods,seed,best_epoch,val_mse,test_mse,test_mae,seconds_per_step,seconds\n");
    for r in results {
        let periods: Vec<String> = r.periods.iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.3}\n",
            r.regime,
            periods.join(";"),
            r.seed,
            r.best_epoch,
            r.val_mse,
            r.test_mse,
            r.test_mae,
            r.seconds_per_step,
            r.seconds
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
