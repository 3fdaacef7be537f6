//! Bias-regime ablation on a synthetic two-period series.
//!
//! ```text
//! cargo run --release --example ablation -- --seeds 3 --epochs 4
//! ```

use std::time::Instant;

use clap::Parser;
use penguin::bias::Regime;
use penguin::data::{prepare_splits, synth_series, Component, SplitRatios, SynthSpec};
use penguin::model::PenguinConfig;
use penguin::tensor::Precision;
use penguin::train::{ablation_sweep, summarize, TrainConfig};

#[derive(Parser)]
struct Opts {
    #[arg(long, value_delimiter = ',', default_value = "24,56")]
    data_periods: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "24,56")]
    model_periods: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "nobias,nonperiodic,periodic,both")]
    regimes: Vec<Regime>,
    #[arg(long, default_value_t = 4000)]
    length: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 96)]
    lookback: usize,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long, default_value_t = 48)]
    d_model: usize,
    #[arg(long, default_value_t = 12)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long)]
    max_batches: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    no_causal: bool,
}

fn main() -> penguin::Result<()> {
    let o = Opts::parse();
    let table = synth_series(&SynthSpec {
        length: o.length,
        channels: 1,
        components: o.data_periods.iter().map(|&p| Component::new(p, 1.0)).collect(),
        trend: 0.0,
        noise: o.noise,
        seed: 7,
    })?;
    let model = PenguinConfig {
        lookback: o.lookback,
        horizon: o.horizon,
        channels: 1,
        patch_len: o.patch,
        stride: o.stride,
        d_model: o.d_model,
        d_ff: 2 * o.d_model,
        heads: o.heads,
        layers: o.layers,
        periods: o.model_periods.clone(),
        causal: !o.no_causal,
        precision: Precision::F32,
        ..Default::default()
    };
    let train = TrainConfig {
        lr: o.lr,
        max_epochs: o.epochs,
        patience: o.epochs.min(3),
        max_batches_per_epoch: o.max_batches,
        ..Default::default()
    };
    let data = prepare_splits::<f32>(&table, SplitRatios::GENERIC, o.lookback, o.horizon, true, false)?;
    println!("{} train / {} val / {} test windows, {} tokens", data.train.len(), data.val.len(), data.test.len(), model.n_patches());
    let seeds: Vec<u64> = (0..o.seeds).collect();
    let started = Instant::now();
    let results = ablation_sweep(&model, &train, &data, &o.regimes, &seeds)?;
    for r in &results {
        println!(
            "{:<12} seed {}  best epoch {}  test mse {:.5}  {:.1} ms/step",
            r.regime.to_string(),
            r.seed,
            r.best_epoch,
            r.test_mse,
            1e3 * r.seconds_per_step
        );
    }
    println!("{:<12} {:>10} {:>10} {:>10}", "regime", "median", "mean", "sd");
    for s in summarize(&results) {
        println!("{:<12} {:>10.5} {:>10.5} {:>10.5}", s.regime.to_string(), s.median, s.mean, s.sd);
    }
    println!("{:.1}s total", started.elapsed().as_secs_f64());
    Ok(())
}
