use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SeriesTable;

/// One sinusoid `amplitude·sin(2πt/period + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Component {
    pub fn new(period: f64, amplitude: f64) -> Self {
        Self {
            period,
            amplitude,
            phase: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    pub channels: usize,
    pub components: Vec<Component>,
    #[serde(default)]
    pub trend: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Sum of sinusoids plus a linear trend plus Gaussian noise.
///
/// Channel `c` shifts every phase by `c` radians so channels differ but share
/// their periods.
pub fn synth_series(spec: &SynthSpec) -> Result<SeriesTable> {
    if spec.channels == 0 {
        return Err(Error::Config("synthetic series needs at least one channel".into()));
    }
    if let Some(c) = spec.components.iter().find(|c| !(c.period >= 2.0)) {
        return Err(Error::Config(format!("component period {} is below 2", c.period)));
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.length * spec.channels);
    for t in 0..spec.length {
        let tf = t as f64;
        for ch in 0..spec.channels {
            let mut v = spec.trend * tf;
            for comp in &spec.components {
                v += comp.amplitude * (TAU * tf / comp.period + comp.phase + ch as f64).sin();
            }
            if spec.noise > 0.0 {
                v += noise.sample(&mut rng);
            }
            values.push(v);
        }
    }
    let names = (0..spec.channels).map(|c| format!("x{c}")).collect();
    SeriesTable::new(names, values, None)
}
