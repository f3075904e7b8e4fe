//! Checkpoint file format.
//!
//! Layout: magic `PSUP` (4 bytes), format version (little-endian u32),
//! manifest length (little-endian u64), UTF-8 JSON manifest mapping tensor
//! names to dtype/shape/offset/length plus a config echo, then the raw
//! little-endian f64 blobs in manifest order.

use std::fs;
use std::path::Path;

use progsup_autodiff::{AdamState, Tensor};
use progsup_model::{DecoderConfig, ModelConfig, ParamId, VlModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PSUP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected PSUP")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("blob truncated: manifest wants {expected} bytes, file holds {found}")]
    Truncated { expected: usize, found: usize },
    #[error("manifest and blob disagree for tensor {name}: {detail}")]
    BlobMismatch { name: String, detail: String },
    #[error("shape mismatch loading into the model: {0:?}")]
    ShapeMismatch(Vec<String>),
    #[error("model is missing tensors named in the checkpoint: {0:?}")]
    MissingTensors(Vec<String>),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    len_bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestJson {
    tensors: Vec<TensorEntry>,
    model: ModelConfig,
    decoder: DecoderConfig,
    stop_index: usize,
    step: u64,
    seed: u64,
}

/// Deserialized checkpoint: named tensors plus the config echo.
#[derive(Debug)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub model: ModelConfig,
    pub decoder: DecoderConfig,
    pub stop_index: usize,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Captures the model state (and optionally Adam moments as `opt.*`
/// tensors) into checkpoint form.
pub fn snapshot(model: &VlModel, optimizer: Option<&AdamState>, step: u64, seed: u64) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor)> = model
        .params
        .iter()
        .map(|(name, value)| (name.to_string(), (**value).clone()))
        .collect();
    if let Some(opt) = optimizer {
        let (m, v) = opt.moments();
        for (i, (name, _)) in model.params.iter().enumerate() {
            let shape = model.params.value(ParamId(i)).shape().to_vec();
            tensors.push((format!("opt.m.{name}"), Tensor::new(shape.clone(), m[i].clone())));
            tensors.push((format!("opt.v.{name}"), Tensor::new(shape, v[i].clone())));
        }
    }
    Checkpoint {
        tensors,
        model: model.encoder.config.clone(),
        decoder: model.decoder.config.clone(),
        stop_index: model.decoder.stop_index,
        step,
        seed,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut offset = 0usize;
    for (name, t) in &ckpt.tensors {
        let len_bytes = t.numel() * 8;
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f64".to_string(),
            shape: t.shape().to_vec(),
            offset,
            len_bytes,
        });
        offset += len_bytes;
    }
    let manifest = ManifestJson {
        tensors: entries,
        model: ckpt.model.clone(),
        decoder: ckpt.decoder.clone(),
        stop_index: ckpt.stop_index,
        step: ckpt.step,
        seed: ckpt.seed,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for (_, t) in &ckpt.tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(CheckpointError::Truncated { expected: 16 + manifest_len, found: bytes.len() });
    }
    let manifest: ManifestJson = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let blob = &bytes[16 + manifest_len..];
    let total: usize = manifest.tensors.iter().map(|t| t.len_bytes).sum();
    if blob.len() != total {
        return Err(CheckpointError::Truncated { expected: total, found: blob.len() });
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        if entry.dtype != "f64" {
            return Err(CheckpointError::BlobMismatch {
                name: entry.name.clone(),
                detail: format!("unsupported dtype {}", entry.dtype),
            });
        }
        if numel * 8 != entry.len_bytes || entry.offset + entry.len_bytes > blob.len() {
            return Err(CheckpointError::BlobMismatch {
                name: entry.name.clone(),
                detail: format!(
                    "shape {:?} disagrees with {} bytes at offset {}",
                    entry.shape, entry.len_bytes, entry.offset
                ),
            });
        }
        let data: Vec<f64> = blob[entry.offset..entry.offset + entry.len_bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)));
    }
    Ok(Checkpoint {
        tensors,
        model: manifest.model,
        decoder: manifest.decoder,
        stop_index: manifest.stop_index,
        step: manifest.step,
        seed: manifest.seed,
    })
}

/// Loads checkpoint tensors into a model, skipping names in `skip`.
/// Mismatched shapes are collected and reported together.
pub fn apply_to_model(
    model: &mut VlModel,
    ckpt: &Checkpoint,
    skip: &[&str],
) -> Result<(), CheckpointError> {
    let mut mismatched = Vec::new();
    let mut missing = Vec::new();
    let mut updates: Vec<(ParamId, Tensor)> = Vec::new();
    for (name, tensor) in &ckpt.tensors {
        if name.starts_with("opt.") || skip.contains(&name.as_str()) {
            continue;
        }
        match model.params.lookup(name) {
            None => missing.push(name.clone()),
            Some(id) => {
                if model.params.value(id).shape() != tensor.shape() {
                    mismatched.push(format!(
                        "{name}: checkpoint {:?} vs model {:?}",
                        tensor.shape(),
                        model.params.value(id).shape()
                    ));
                } else {
                    updates.push((id, tensor.clone()));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(CheckpointError::MissingTensors(missing));
    }
    if !mismatched.is_empty() {
        return Err(CheckpointError::ShapeMismatch(mismatched));
    }
    for (id, tensor) in updates {
        model.params.set_value(id, tensor);
    }
    Ok(())
}
