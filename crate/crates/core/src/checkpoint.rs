//! Model checkpoints: a little-endian `f64` parameter blob next to a JSON
//! sidecar that records everything needed to rebuild the model.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heads::Method;
use crate::model::{EncoderConfig, Model, ModelError, Standardizer, TrainConfig};
use crate::pipeline::PoolingMap;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: parameter blob of {len} bytes is not a whole number of f64 values")]
    TruncatedBlob { path: PathBuf, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub method: Method,
    #[serde(rename = "K")]
    pub k: u32,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub pooling: PoolingMap,
    pub seed: u64,
    pub final_training_loss: Option<f64>,
    pub param_count: usize,
    /// Feature scaling of PATTERN models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Paths of the blob and sidecar for a checkpoint stem.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save_checkpoint(
    stem: &Path,
    model: &Model,
    train: &TrainConfig,
    pooling: &PoolingMap,
) -> Result<CheckpointMeta, CheckpointError> {
    let (bin, json) = checkpoint_paths(stem);
    let blob: Vec<u8> = model.params().iter().flat_map(|p| p.to_le_bytes()).collect();
    write_atomic(&bin, &blob).map_err(|source| CheckpointError::Io { path: bin.clone(), source })?;
    let meta = CheckpointMeta {
        method: model.method,
        k: model.k,
        encoder: model.encoder.clone(),
        train: train.clone(),
        pooling: pooling.clone(),
        seed: model.seed,
        final_training_loss: model.final_loss(),
        param_count: model.param_count(),
        standardizer: model.standardizer.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|source| CheckpointError::Json {
        path: json.clone(),
        source,
    })?;
    write_atomic(&json, text.as_bytes()).map_err(|source| CheckpointError::Io { path: json, source })?;
    Ok(meta)
}

pub fn load_checkpoint(stem: &Path) -> Result<(Model, CheckpointMeta), CheckpointError> {
    let (bin, json) = checkpoint_paths(stem);
    let text = std::fs::read_to_string(&json).map_err(|source| CheckpointError::Io {
        path: json.clone(),
        source,
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|source| CheckpointError::Json { path: json, source })?;
    let bytes = std::fs::read(&bin).map_err(|source| CheckpointError::Io { path: bin.clone(), source })?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::TruncatedBlob {
            path: bin,
            len: bytes.len(),
        });
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks are 8 bytes")))
        .collect();
    let mut model = Model::from_parts(meta.method, meta.k, &meta.encoder, meta.seed, params, meta.standardizer.clone())?;
    model.loss_history = meta.final_training_loss.into_iter().collect();
    Ok((model, meta))
}
