//! Checkpoint files.
//!
//! Layout: a single-line JSON manifest (format version, vocab digest, model
//! and generator configs, tensor table with byte offsets) followed by a raw
//! payload of little-endian IEEE-754 f64 values in manifest order. Loading
//! reproduces every tensor bit-exactly. Writes go through a temp file and a
//! rename, so a checkpoint is never observable half-written.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::SceneConfig;

use super::adapters::AdapterConfig;
use super::model::{ModelConfig, ParamSet, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    /// `"base"` or `"adapter"`.
    pub set: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub vocab_digest: String,
    pub model: ModelConfig,
    pub scene_config: SceneConfig,
    /// Which pipeline stage produced this checkpoint (`"stage1"`, ...).
    pub trained_stage: String,
    /// Whether contexts for this policy carry the history segment.
    pub uses_history: bool,
    pub adapter: Option<AdapterConfig>,
    pub tensors: Vec<TensorMeta>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// In-memory checkpoint: manifest plus the parameter sets it describes.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub base: ParamSet,
    pub adapters: Option<ParamSet>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: ModelConfig,
        scene_config: SceneConfig,
        vocab_digest: String,
        trained_stage: String,
        uses_history: bool,
        base: ParamSet,
        adapters: Option<(ParamSet, AdapterConfig)>,
    ) -> Self {
        let (adapter_params, adapter_cfg) = match adapters {
            Some((p, c)) => (Some(p), Some(c)),
            None => (None, None),
        };
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        let mut describe = |set: &str, t: &Tensor, offset: &mut u64| {
            tensors.push(TensorMeta {
                name: t.name.clone(),
                set: set.to_string(),
                shape: t.shape.clone(),
                dtype: "f64le".to_string(),
                byte_offset: *offset,
                trainable: t.trainable,
            });
            *offset += (t.len() * 8) as u64;
        };
        for t in &base.tensors {
            describe("base", t, &mut offset);
        }
        if let Some(ad) = &adapter_params {
            for t in &ad.tensors {
                describe("adapter", t, &mut offset);
            }
        }
        Checkpoint {
            manifest: CheckpointManifest {
                format_version: CHECKPOINT_FORMAT_VERSION,
                vocab_digest,
                model,
                scene_config,
                trained_stage,
                uses_history,
                adapter: adapter_cfg,
                tensors,
            },
            base,
            adapters: adapter_params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let mut bytes =
            serde_json::to_vec(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let push_set = |set: &ParamSet, bytes: &mut Vec<u8>| {
            for t in &set.tensors {
                for v in &t.data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        push_set(&self.base, &mut bytes);
        if let Some(ad) = &self.adapters {
            push_set(ad, &mut bytes);
        }
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
            f.write_all(&bytes).map_err(io_err)?;
            f.flush().map_err(io_err)?;
        }
        std::fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }
}

/// Save helper mirroring [`Checkpoint::save`].
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    checkpoint.save(path)
}

/// Load a checkpoint, reconstructing every tensor bit-exactly.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let bytes = std::fs::read(path).map_err(io_err)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Format("missing manifest line".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[..newline])?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported checkpoint format_version {}",
            manifest.format_version
        )));
    }
    let payload = &bytes[newline + 1..];
    let mut base = ParamSet::default();
    let mut adapters: Option<ParamSet> = None;
    for meta in &manifest.tensors {
        let count: usize = meta.shape.iter().product();
        let start = meta.byte_offset as usize;
        let end = start + count * 8;
        if end > payload.len() {
            return Err(CheckpointError::Format(format!(
                "tensor {} overruns payload ({} > {})",
                meta.name,
                end,
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(count);
        for chunk in payload[start..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
        }
        let target = match meta.set.as_str() {
            "base" => &mut base,
            "adapter" => adapters.get_or_insert_with(ParamSet::default),
            other => {
                return Err(CheckpointError::Format(format!("unknown tensor set `{other}`")))
            }
        };
        target.push(meta.name.clone(), meta.shape.clone(), data);
        target.get_mut(&meta.name).trainable = meta.trainable;
    }
    Ok(Checkpoint { manifest, base, adapters })
}
