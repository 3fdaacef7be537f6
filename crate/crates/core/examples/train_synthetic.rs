//! Train a small model on a synthetic daily-plus-weekly series and report
//! test metrics against a repeat-last-period baseline.
//!
//! ```text
//! cargo run --release --example train_synthetic
//! ```

use penguin::data::{prepare_splits, synth_series, Component, SplitRatios, SynthSpec};
use penguin::model::{Penguin, PenguinConfig};
use penguin::tensor::{Precision, Tensor};
use penguin::train::{evaluate, train, TrainConfig};

fn main() -> penguin::Result<()> {
    let table = synth_series(&SynthSpec {
        length: 5000,
        channels: 2,
        components: vec![Component::new(24.0, 1.0), Component::new(168.0, 0.6)],
        trend: 0.0005,
        noise: 0.2,
        seed: 11,
    })?;
    let config = PenguinConfig {
        lookback: 336,
        horizon: 48,
        channels: 2,
        d_model: 32,
        d_ff: 64,
        layers: 1,
        precision: Precision::F32,
        ..Default::default()
    };
    let data = prepare_splits::<f32>(&table, SplitRatios::GENERIC, config.lookback, config.horizon, true, false)?;
    let mut model = Penguin::<f32>::new(config.clone(), 0)?;
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 2,
        ..Default::default()
    };
    let history = train(&mut model, &data.train, Some(&data.val), &cfg)?;
    for e in &history.epochs {
        println!("epoch {:>2}  train {:.4}  val {:.4}  {:.1}s", e.epoch, e.train_loss, e.val_mse.unwrap_or(f64::NAN), e.seconds);
    }
    let report = evaluate(&model, &data.test, 64)?;
    println!("test mse {:.4}  mae {:.4}  over {} windows", report.mse, report.mae, report.samples);

    let (h, l) = (config.horizon, config.lookback);
    let seasonal = |x: &Tensor<f32>| -> penguin::Result<Tensor<f32>> {
        let (b, c) = (x.shape()[0], x.shape()[2]);
        let mut out = Vec::with_capacity(b * h * c);
        for s in 0..b {
            for t in 0..h {
                let src = l - 168 + t % 168;
                out.extend_from_slice(&x.data()[(s * l + src) * c..(s * l + src + 1) * c]);
            }
        }
        Ok(Tensor::new(vec![b, h, c], out)?)
    };
    let baseline = evaluate(&seasonal, &data.test, 64)?;
    println!("repeat-last-week baseline mse {:.4}  mae {:.4}", baseline.mse, baseline.mae);
    Ok(())
}
