use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor, Var};

fn same_shape<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Data(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Training objective on `[B, H, C]`: squared error summed over channels,
/// averaged over horizon steps and samples.
pub fn mse_loss_var<T: Float>(pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    let s = pred.shape();
    if s.len() != 3 || s != target.shape() {
        return Err(Error::Data(format!(
            "loss expects matching [B, H, C] shapes, got {s:?} and {:?}",
            target.shape()
        )));
    }
    let diff = pred.sub(&pred.tape().constant(target))?;
    Ok(diff.mul(&diff)?.sum()?.scale(1.0 / (s[0] * s[1]) as f64)?)
}

/// `(1/H)·Σᵢ ‖predᵢ − targetᵢ‖²` for a single `[H, C]` forecast.
pub fn mse_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape(pred, target)?;
    let h = pred.shape().first().copied().unwrap_or(1);
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(sq / h as f64)
}

/// Mean squared error over every element.
pub fn mse_fully_averaged<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape(pred, target)?;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(sq / pred.numel() as f64)
}

/// Mean absolute error over every element.
pub fn mae<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape(pred, target)?;
    let abs: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).abs())
        .sum();
    Ok(abs / pred.numel() as f64)
}
