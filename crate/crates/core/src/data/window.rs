use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

use super::SeriesTable;

/// Stride-1 sliding windows over one segment, materialized on demand.
#[derive(Clone, Debug)]
pub struct WindowedDataset<T: Float = f64> {
    values: Arc<Vec<T>>,
    rows: usize,
    channels: usize,
    lookback: usize,
    horizon: usize,
}

/// Windows `[t, t+L)` → `[t+L, t+L+H)` for every valid `t`.
pub fn make_windows<T: Float>(segment: &SeriesTable, lookback: usize, horizon: usize) -> Result<WindowedDataset<T>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("look-back and horizon must be positive".into()));
    }
    if segment.rows() < lookback + horizon {
        return Err(Error::Data(format!(
            "segment of {} rows is shorter than look-back {lookback} + horizon {horizon}",
            segment.rows()
        )));
    }
    Ok(WindowedDataset::from_table(segment, lookback, horizon))
}

impl<T: Float> WindowedDataset<T> {
    /// Like [`make_windows`] but a too-short segment yields an empty dataset.
    pub fn from_table(segment: &SeriesTable, lookback: usize, horizon: usize) -> Self {
        Self {
            values: Arc::new(segment.values().iter().map(|&v| T::of(v)).collect()),
            rows: segment.rows(),
            channels: segment.channels(),
            lookback,
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        (self.rows + 1).saturating_sub(self.lookback + self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn rows_of(&self, start: usize, count: usize) -> &[T] {
        &self.values[start * self.channels..(start + count) * self.channels]
    }

    /// `(input [L, C], target [H, C])` for window `i`.
    pub fn sample(&self, i: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        if i >= self.len() {
            return Err(Error::Data(format!("window {i} out of range (len {})", self.len())));
        }
        let x = self.rows_of(i, self.lookback).to_vec();
        let y = self.rows_of(i + self.lookback, self.horizon).to_vec();
        Ok((
            Tensor::new(vec![self.lookback, self.channels], x)?,
            Tensor::new(vec![self.horizon, self.channels], y)?,
        ))
    }

    /// Stacked `(inputs [B, L, C], targets [B, H, C])`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let c = self.channels;
        let mut x = Vec::with_capacity(indices.len() * self.lookback * c);
        let mut y = Vec::with_capacity(indices.len() * self.horizon * c);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("window {i} out of range (len {})", self.len())));
            }
            x.extend_from_slice(self.rows_of(i, self.lookback));
            y.extend_from_slice(self.rows_of(i + self.lookback, self.horizon));
        }
        Ok((
            Tensor::new(vec![indices.len(), self.lookback, c], x)?,
            Tensor::new(vec![indices.len(), self.horizon, c], y)?,
        ))
    }
}
