use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Per-channel statistics captured when a window is normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct RevinState {
    pub mean: Vec<f64>,
    /// `√(σ² + ε)`, the divisor actually applied.
    pub scale: Vec<f64>,
    pub eps: f64,
}

/// Mean and `√(var + ε)` of a strided column, population variance.
pub(crate) fn column_stats<T: Float>(values: impl Iterator<Item = T> + Clone, eps: f64) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        sum += v.as_f64();
        n += 1;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, (var + eps).sqrt())
}

/// Standardize each column of `x: [L, C]`.
pub fn revin_normalize<T: Float>(x: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, RevinState)> {
    let s = x.shape();
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::Data(format!("revin expects [L >= 2, C], got {s:?}")));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("revin input contains non-finite values".into()));
    }
    let (l, c) = (s[0], s[1]);
    let d = x.data();
    let mut state = RevinState {
        mean: Vec::with_capacity(c),
        scale: Vec::with_capacity(c),
        eps,
    };
    for ch in 0..c {
        let (m, sd) = column_stats((0..l).map(|t| d[t * c + ch]), eps);
        state.mean.push(m);
        state.scale.push(sd);
    }
    let out = (0..l * c)
        .map(|i| T::of((d[i].as_f64() - state.mean[i % c]) / state.scale[i % c]))
        .collect();
    Ok((Tensor::new(vec![l, c], out)?, state))
}

/// Inverse of [`revin_normalize`] on `y: [H, C]`.
pub fn revin_denormalize<T: Float>(y: &Tensor<T>, state: &RevinState) -> Result<Tensor<T>> {
    let s = y.shape();
    let c = state.mean.len();
    if s.len() != 2 || s[1] != c {
        return Err(Error::Data(format!(
            "denormalize expects [H, {c}], got {s:?}"
        )));
    }
    let out = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| T::of(v.as_f64() * state.scale[i % c] + state.mean[i % c]))
        .collect();
    Ok(Tensor::new(s.to_vec(), out)?)
}
