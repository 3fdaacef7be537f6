//! Binary checkpoint: `PNGN`, a version byte, a little-endian `u32` header
//! length, a JSON header, then every parameter as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

use super::{ParamStore, Penguin, PenguinConfig};

const MAGIC: &[u8; 4] = b"PNGN";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the first value, counted from the start of the blob section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: PenguinConfig,
    pub scaler: Option<Scaler>,
    pub params: Vec<ManifestEntry>,
}

pub fn save_checkpoint<T: Float>(path: &Path, model: &Penguin<T>, scaler: Option<&Scaler>) -> Result<()> {
    let mut params = Vec::with_capacity(model.params().len());
    let mut blob = Vec::with_capacity(model.params().numel() * 4);
    for (name, t) in model.params().iter() {
        params.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        config: model.config().clone(),
        scaler: scaler.cloned(),
        params,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Config("checkpoint header too large".into()))?;
    let mut out = Vec::with_capacity(9 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn split(path: &Path, bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let bad = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    Ok((header, 9 + len))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split(path, &bytes)?.0)
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<(Penguin<T>, Option<Scaler>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, start) = split(path, &bytes)?;
    let blob = &bytes[start..];
    let mut named = Vec::with_capacity(header.params.len());
    for entry in &header.params {
        let count: usize = entry.shape.iter().product();
        let raw = blob
            .get(entry.offset..entry.offset + 4 * count)
            .ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("blob for {} is truncated", entry.name),
            })?;
        let values = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        named.push((entry.name.clone(), Tensor::new(entry.shape.clone(), values)?));
    }
    let params = ParamStore::from_named(&header.config, named)?;
    Ok((Penguin::from_params(header.config, params)?, header.scaler))
}
