use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACF_THRESHOLD: f64 = 0.1;

/// Biased sample autocorrelation `r(τ)` for `τ = 0..=max_lag` of the
/// mean-removed series. A constant series gives `r ≡ 0`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            if c0 <= 0.0 {
                return 0.0;
            }
            let ck: f64 = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            ck / c0
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcfPeak {
    pub lag: usize,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcfReport {
    pub max_lag: usize,
    pub threshold: f64,
    /// Local maxima above the threshold, strongest first, at most `top_k`.
    pub peaks: Vec<AcfPeak>,
}

impl AcfReport {
    pub fn periods(&self) -> Vec<usize> {
        self.peaks.iter().map(|p| p.lag).collect()
    }
}

/// Candidate periods: lags in `1..=max_lag` where the ACF has a local
/// maximum above [`ACF_THRESHOLD`].
pub fn detect_periods_acf(series: &[f64], max_lag: usize, top_k: usize) -> Result<AcfReport> {
    if max_lag < 2 || series.len() <= max_lag {
        return Err(Error::Data(format!(
            "need series length > max_lag >= 2, got length {} and max_lag {max_lag}",
            series.len()
        )));
    }
    let r = autocorrelation(series, max_lag + 1);
    let mut peaks: Vec<AcfPeak> = (1..=max_lag)
        .filter(|&lag| {
            let right = r.get(lag + 1).copied().unwrap_or(f64::NEG_INFINITY);
            r[lag] > ACF_THRESHOLD && r[lag] > r[lag - 1] && r[lag] >= right
        })
        .map(|lag| AcfPeak { lag, r: r[lag] })
        .collect();
    peaks.sort_by(|a, b| b.r.total_cmp(&a.r).then(a.lag.cmp(&b.lag)));
    peaks.truncate(top_k);
    Ok(AcfReport {
        max_lag,
        threshold: ACF_THRESHOLD,
        peaks,
    })
}
