//! Training-step wall time of grouped attention against the per-head reference.
//!
//! ```text
//! cargo run --release --example gqa_vs_mha
//! ```

use penguin::data::{synth_series, Component, SynthSpec, WindowedDataset};
use penguin::model::{AttentionKind, Penguin, PenguinConfig};
use penguin::tensor::Precision;
use penguin::train::{median, time_train_steps, TrainConfig};

fn main() -> penguin::Result<()> {
    let base = PenguinConfig {
        precision: Precision::F32,
        ..Default::default()
    };
    let table = synth_series(&SynthSpec {
        length: base.lookback + base.horizon + 40,
        channels: 1,
        components: vec![Component::new(24.0, 1.0), Component::new(168.0, 0.5)],
        trend: 0.0,
        noise: 0.1,
        seed: 0,
    })?;
    let ds = WindowedDataset::<f32>::from_table(&table, base.lookback, base.horizon);
    let cfg = TrainConfig::default();
    println!(
        "N={} d={} h={} groups={} batch={}",
        base.n_patches(),
        base.d_model,
        base.heads,
        base.groups()?,
        cfg.batch_size
    );
    for kind in [AttentionKind::Gqa, AttentionKind::Mha] {
        let config = PenguinConfig {
            attention: kind,
            ..base.clone()
        };
        let model = Penguin::<f32>::new(config, 0)?;
        let times = time_train_steps(&model, &ds, &cfg, 3, 20)?;
        println!(
            "{kind}: {} parameters, median {:.2} ms/step",
            model.params().numel(),
            1e3 * median(&times)
        );
    }
    Ok(())
}
