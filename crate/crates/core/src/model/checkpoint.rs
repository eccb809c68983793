//! Checkpoint directories: `manifest.txt` (TOML: config, metadata and a
//! tensor table of names, shapes and byte offsets) next to `weights.bin`
//! (every tensor as little-endian `f32`, concatenated in table order).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor};

use super::{ConfigError, Vst, VstConfig};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "weights.bin";
const FORMAT: &str = "vst-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint manifest: {0}")]
    Corrupt(String),
    #[error("shape mismatch for tensor {tensor}: model expects {expected:?}, checkpoint has {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("truncated weights blob: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub blob_bytes: u64,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub config: VstConfig,
    #[serde(default)]
    pub tensor: Vec<TensorEntry>,
}

impl Manifest {
    /// Parses and structurally validates a manifest: header fields, config
    /// grids, and a contiguous tensor table that exactly fills the blob.
    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let m: Manifest = toml::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(CheckpointError::Corrupt(format!(
                "unsupported format {:?} version {}",
                m.format, m.version
            )));
        }
        if m.dtype != "f32" {
            return Err(CheckpointError::Corrupt(format!("unsupported dtype {:?}", m.dtype)));
        }
        m.config.validate()?;
        let mut offset = 0u64;
        for t in &m.tensor {
            if t.offset != offset {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {} at offset {}, expected {offset}",
                    t.name, t.offset
                )));
            }
            let bytes = t
                .shape
                .iter()
                .try_fold(4u64, |acc, &n| acc.checked_mul(n as u64))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {} is too large", t.name)))?;
            offset = offset
                .checked_add(bytes)
                .ok_or_else(|| CheckpointError::Corrupt("tensor table overflows".into()))?;
        }
        if offset != m.blob_bytes {
            return Err(CheckpointError::Corrupt(format!(
                "tensor table covers {offset} bytes, blob_bytes says {}",
                m.blob_bytes
            )));
        }
        Ok(m)
    }
}

/// A loaded checkpoint. Parameters are kept at the stored `f32` precision.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: VstConfig,
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Vst, ConfigError> {
        Vst::new(&self.config)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `params` (rounded to `f32`) and `config` into directory `dir`.
pub fn save_checkpoint<T: Float>(
    dir: &Path,
    config: &VstConfig,
    params: &ParamStore<T>,
    meta: &BTreeMap<String, String>,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blob = Vec::with_capacity(params.numel() * 4);
    let mut table = Vec::with_capacity(params.len());
    for (_, name, t) in params.iter() {
        table.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32".into(),
        blob_bytes: blob.len() as u64,
        meta: meta.clone(),
        config: config.clone(),
        tensor: table,
    };
    let text = toml::to_string(&manifest).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(())
}

/// Decodes a parsed manifest and its blob against the architecture the
/// manifest's config describes.
pub fn decode_checkpoint(manifest: Manifest, blob: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if (blob.len() as u64) < manifest.blob_bytes {
        return Err(CheckpointError::Truncated {
            expected: manifest.blob_bytes,
            found: blob.len() as u64,
        });
    }
    if blob.len() as u64 > manifest.blob_bytes {
        return Err(CheckpointError::Corrupt(format!(
            "blob has {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let model = Vst::new(&manifest.config)?;
    let reg = model.registry();
    if reg.len() != manifest.tensor.len() {
        return Err(CheckpointError::Corrupt(format!(
            "model has {} tensors, checkpoint lists {}",
            reg.len(),
            manifest.tensor.len()
        )));
    }
    let mut tensors = Vec::with_capacity(reg.len());
    for (spec, entry) in reg.specs().iter().zip(&manifest.tensor) {
        if spec.name != entry.name {
            return Err(CheckpointError::Corrupt(format!(
                "expected tensor {}, found {}",
                spec.name, entry.name
            )));
        }
        if spec.shape != entry.shape {
            return Err(CheckpointError::ShapeMismatch {
                tensor: entry.name.clone(),
                expected: spec.shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let bytes = usize::try_from(entry.offset)
            .ok()
            .and_then(|start| blob.get(start..start.checked_add(spec.numel() * 4)?))
            .ok_or_else(|| {
                CheckpointError::Corrupt(format!(
                    "tensor {} at offset {} overruns the {}-byte blob",
                    entry.name,
                    entry.offset,
                    blob.len()
                ))
            })?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(&spec.shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?);
    }
    let params = ParamStore::from_tensors(reg, tensors).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        config: manifest.config,
        meta: manifest.meta,
        params,
    })
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest = Manifest::parse(&text)?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    decode_checkpoint(manifest, &blob)
}
