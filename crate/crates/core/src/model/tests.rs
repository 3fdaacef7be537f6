use super::*;
use crate::attention::replicate_kv;
use crate::bias::Regime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> PenguinConfig {
    PenguinConfig {
        lookback: 16,
        horizon: 4,
        channels: 2,
        patch_len: 4,
        stride: 2,
        d_model: 8,
        d_ff: 16,
        heads: 4,
        layers: 1,
        regime: Regime::Both,
        periods: vec![6],
        ..Default::default()
    }
}

fn random<T: Float>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(rng.random_range(-2.0..2.0))).collect()).unwrap()
}

#[test]
fn output_shape_contract() {
    for (b, c) in [(1, 1), (3, 2), (5, 4)] {
        let cfg = PenguinConfig {
            channels: c,
            ..tiny()
        };
        let m = Penguin::<f64>::new(cfg, 0).unwrap();
        assert_eq!(m.predict(&random(&[b, 16, c], 1)).unwrap().shape(), &[b, 4, c]);
        assert_eq!(m.forward(&random(&[16, c], 2)).unwrap().shape(), &[4, c]);
    }
    let m = Penguin::<f64>::new(tiny(), 0).unwrap();
    assert!(matches!(m.predict(&random(&[1, 15, 2], 1)), Err(Error::Data(_))));
    assert!(matches!(m.predict(&random(&[1, 16, 3], 1)), Err(Error::Data(_))));
}

#[test]
fn channels_do_not_leak() {
    let cfg = PenguinConfig {
        channels: 3,
        layers: 2,
        ..tiny()
    };
    let m = Penguin::<f64>::new(cfg, 5).unwrap();
    let x = random::<f64>(&[2, 16, 3], 6);
    let base = m.predict(&x).unwrap();
    for target in 0..3 {
        let mut bumped = x.clone();
        for t in 0..16 {
            bumped.data_mut()[t * 3 + target] += 0.7 * (t as f64).cos();
        }
        let out = m.predict(&bumped).unwrap();
        for (i, (a, b)) in base.data().iter().zip(out.data()).enumerate() {
            if i % 3 == target {
                continue;
            }
            assert_eq!(a, b, "channel {} moved when {target} was perturbed", i % 3);
        }
        assert_ne!(base.data(), out.data());
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let x = random::<f64>(&[3, 16, 2], 9);
    let a = Penguin::<f64>::new(tiny(), 1).unwrap().predict(&x).unwrap();
    let b = Penguin::<f64>::new(tiny(), 1).unwrap().predict(&x).unwrap();
    assert_eq!(a.data(), b.data());
    let xf = x.cast::<f32>();
    let c = Penguin::<f32>::new(tiny(), 1).unwrap().predict(&xf).unwrap();
    let d = Penguin::<f32>::new(tiny(), 1).unwrap().predict(&xf).unwrap();
    assert_eq!(c.data(), d.data());
    for (p, q) in a.data().iter().zip(c.data()) {
        assert!((p - *q as f64).abs() < 1e-3);
    }
}

#[test]
fn zero_sublayers_are_identity() {
    let cfg = tiny();
    let bias = AttentionBias::<f64>::new(&cfg.bias_stack().unwrap(), true).unwrap();
    let tape = Tape::<f64>::new();
    let x = tape.constant(&random(&[2, cfg.n_patches(), 8], 3));
    let z = |s: &[usize]| tape.constant(&Tensor::zeros(s.to_vec()).unwrap());
    let ones = tape.constant(&Tensor::full(vec![8], 1.0).unwrap());
    let vars = [
        z(&[8, 8]),
        z(&[8, 4]),
        z(&[8, 4]),
        z(&[8, 8]),
        ones.clone(),
        z(&[8, 16]),
        z(&[16]),
        z(&[16, 8]),
        z(&[8]),
        ones,
    ];
    let layer = LayerVars::from_slice(&vars);
    let y = encoder_layer(&x, &layer, &bias, AttentionKind::Gqa, 1e-5, None, None).unwrap();
    assert_eq!(y.value().data(), x.value().data());
}

#[test]
fn rms_norm_example() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(&Tensor::from_f64(vec![1, 2], &[3.0, 4.0]).unwrap());
    let g = tape.constant(&Tensor::full(vec![2], 1.0).unwrap());
    let y = x.rms_norm_lastdim(1e-5).unwrap().mul_tiled(&g).unwrap().value();
    let r = (12.5f64 + 1e-5).sqrt();
    assert!((y.data()[0] - 3.0 / r).abs() < 1e-15);
    assert!((y.data()[1] - 4.0 / r).abs() < 1e-15);
}

fn batch_loss(model: &Penguin<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let pred = model.predict(x).unwrap();
    let (b, h) = (pred.shape()[0], pred.shape()[1]);
    let sq: f64 = pred.data().iter().zip(y.data()).map(|(p, t)| (p - t).powi(2)).sum();
    sq / (b * h) as f64
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for regime in [Regime::Both, Regime::NoBias] {
        let cfg = PenguinConfig { regime, ..tiny() };
        let model = Penguin::<f64>::new(cfg, 17).unwrap();
        let x = random::<f64>(&[2, 16, 2], 18);
        let y = random::<f64>(&[2, 4, 2], 19);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let loss = mse_loss_var(&model.forward_bound(&bound, &x, None).unwrap(), &y).unwrap();
        assert!((loss.value().item().unwrap() - batch_loss(&model, &x, &y)).abs() < 1e-12);
        let grads = loss.backward().unwrap();
        let step = 1e-5;
        for (pi, var) in bound.vars().iter().enumerate() {
            let analytic = grads.slice(var).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..analytic.len() {
                let mut probe = model.clone();
                probe.params_mut().tensors_mut()[pi].data_mut()[i] += step;
                let up = batch_loss(&probe, &x, &y);
                probe.params_mut().tensors_mut()[pi].data_mut()[i] -= 2.0 * step;
                let down = batch_loss(&probe, &x, &y);
                let num = (up - down) / (2.0 * step);
                worst = worst.max((analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1e-7));
            }
            assert!(worst < 1e-4, "{} ({regime}): {worst}", model.params().names()[pi]);
        }
    }
}

#[test]
fn mha_model_with_replicated_kv_matches() {
    let cfg = PenguinConfig {
        heads: 4,
        regime: Regime::Both,
        periods: vec![6],
        ..tiny()
    };
    let gqa = Penguin::<f64>::new(cfg.clone(), 2).unwrap();
    let mcfg = PenguinConfig {
        attention: AttentionKind::Mha,
        ..cfg
    };
    let named: Vec<(String, Tensor<f64>)> = gqa
        .params()
        .iter()
        .map(|(n, t)| {
            let t = if n.ends_with("w_k") || n.ends_with("w_v") {
                replicate_kv(t, 2, 4).unwrap()
            } else {
                t.clone()
            };
            (n.to_string(), t)
        })
        .collect();
    let mha = Penguin::from_params(mcfg.clone(), ParamStore::from_named(&mcfg, named).unwrap()).unwrap();
    let x = random::<f64>(&[2, 16, 2], 4);
    let a = gqa.predict(&x).unwrap();
    let b = mha.predict(&x).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn traced_forward_exposes_weights() {
    let m = Penguin::<f64>::new(PenguinConfig { layers: 2, ..tiny() }, 0).unwrap();
    let x = random::<f64>(&[1, 16, 2], 1);
    let (y, traces) = m.forward_traced(&x).unwrap();
    assert_eq!(y.data(), m.predict(&x).unwrap().data());
    assert_eq!(traces.len(), 2);
    let w = traces[0].head_weights(1, 4).unwrap();
    assert_eq!(w.len(), m.config().n_patches());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pngn");
    let model = Penguin::<f32>::new(PenguinConfig { layers: 2, ..tiny() }, 8).unwrap();
    let scaler = crate::data::Scaler {
        mean: vec![1.0, -2.0],
        std: vec![0.5, 3.0],
    };
    save_checkpoint(&path, &model, Some(&scaler)).unwrap();
    let (back, sc) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(sc.as_ref(), Some(&scaler));
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params(), model.params());
    let x = random::<f32>(&[4, 16, 2], 2);
    assert_eq!(back.predict(&x).unwrap().data(), model.predict(&x).unwrap().data());

    let header = read_checkpoint_header(&path).unwrap();
    assert_eq!(header.params.len(), model.params().len());
    assert_eq!(header.params[1].offset, 4 * 4 * 8);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"PNGN\x01");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pngn");
    let model = Penguin::<f64>::new(tiny(), 0).unwrap();
    save_checkpoint(&path, &model, None).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint { .. })));

    let mut bad = good.clone();
    bad[4] = 9;
    std::fs::write(&path, &bad).unwrap();
    assert!(load_checkpoint::<f64>(&path).unwrap_err().to_string().contains("version"));

    std::fs::write(&path, &good[..good.len() - 4]).unwrap();
    assert!(load_checkpoint::<f64>(&path).unwrap_err().to_string().contains("truncated"));
}
