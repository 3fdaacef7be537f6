use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// `⌊(L−P)/S⌋ + 2`.
pub fn n_patches(lookback: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 || stride > patch_len {
        return Err(Error::Config(format!(
            "need 0 < stride <= patch length, got P={patch_len}, S={stride}"
        )));
    }
    if lookback < patch_len {
        return Err(Error::Config(format!(
            "look-back {lookback} is shorter than the patch length {patch_len}"
        )));
    }
    Ok((lookback - patch_len) / stride + 2)
}

/// Pads by repeating the last value `stride` times, then cuts windows of
/// `patch_len` every `stride` steps. Writes `N·P` values into `out`.
pub(crate) fn patch_into<T: Float>(series: &[T], patch_len: usize, stride: usize, out: &mut Vec<T>) -> Result<usize> {
    let n = n_patches(series.len(), patch_len, stride)?;
    let last = *series.last().expect("non-empty after n_patches");
    let at = |t: usize| if t < series.len() { series[t] } else { last };
    for p in 0..n {
        out.extend((p * stride..p * stride + patch_len).map(at));
    }
    Ok(n)
}

/// Single channel of length `L` to an `N × P` patch matrix.
pub fn patchify<T: Float>(series: &[T], patch_len: usize, stride: usize) -> Result<Tensor<T>> {
    let mut out = Vec::new();
    let n = patch_into(series, patch_len, stride, &mut out)?;
    Ok(Tensor::new(vec![n, patch_len], out)?)
}
