//! Train briefly, save a checkpoint, reload it and forecast from raw values.

use penguin::data::{prepare_splits, synth_series, Component, SplitRatios, SynthSpec};
use penguin::model::{load_checkpoint, save_checkpoint, Penguin, PenguinConfig};
use penguin::tensor::{Precision, Tensor};
use penguin::train::{train, TrainConfig};

fn main() -> penguin::Result<()> {
    let table = synth_series(&SynthSpec {
        length: 1200,
        channels: 1,
        components: vec![Component::new(24.0, 2.0)],
        trend: 0.0,
        noise: 0.1,
        seed: 3,
    })?;
    let config = PenguinConfig {
        lookback: 96,
        horizon: 24,
        d_model: 24,
        d_ff: 48,
        layers: 1,
        periods: vec![24],
        precision: Precision::F32,
        ..Default::default()
    };
    let data = prepare_splits::<f32>(&table, SplitRatios::GENERIC, config.lookback, config.horizon, true, false)?;
    let mut model = Penguin::<f32>::new(config.clone(), 0)?;
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 1,
        ..Default::default()
    };
    train(&mut model, &data.train, Some(&data.val), &cfg)?;

    let path = std::env::temp_dir().join("penguin-example.ckpt");
    save_checkpoint(&path, &model, Some(&data.scaler))?;
    let (restored, scaler) = load_checkpoint::<f32>(&path)?;
    let scaler = scaler.expect("saved with a scaler");

    let tail = table.slice_rows(table.rows() - config.lookback, table.rows());
    let x = scaler.transform(&tail)?;
    let y = restored.forward(&Tensor::from_f64(vec![config.lookback, 1], x.values())?)?;
    let mut values = y.to_f64_vec();
    scaler.inverse_values(&mut values);
    println!("checkpoint {} ({} bytes)", path.display(), std::fs::metadata(&path).map_or(0, |m| m.len()));
    println!("next {} steps:", config.horizon);
    for (t, v) in values.iter().enumerate() {
        println!("{:>3}  {:+.3}", t + 1, v);
    }
    Ok(())
}
