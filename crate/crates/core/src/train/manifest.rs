use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::PenguinConfig;

use super::{EvalReport, TrainConfig, TrainHistory};

/// SHA-256 of the canonical JSON encoding, as lowercase hex.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let json = serde_json::to_vec(value).map_err(|e| Error::Config(format!("encoding config: {e}")))?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to reproduce or audit a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub model: PenguinConfig,
    pub train: TrainConfig,
    pub parameters: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_score: f64,
    pub seconds_per_step: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test: Option<EvalReport>,
}

impl RunManifest {
    pub fn new(model: &PenguinConfig, train: &TrainConfig, parameters: usize, history: &TrainHistory) -> Result<Self> {
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: train.seed,
            config_hash: config_hash(&(model, train))?,
            model: model.clone(),
            train: train.clone(),
            parameters,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            best_score: history.best_score,
            seconds_per_step: history.seconds_per_step,
            test: None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("encoding manifest: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
