//! Checkpoint file format.
//!
//! Layout: magic `FSLCKPT1`, a little-endian u32 manifest length, the JSON
//! manifest, raw little-endian f32 buffers in manifest-declared order, and a
//! trailing little-endian u64 FNV-1a checksum over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::{FewShotModel, ModelConfig};
use crate::rng::Fnv1a;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSLCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub seed: u64,
    pub best_val_accuracy: f64,
    /// Episode (or epoch, for the siamese head) index of the best validation.
    pub best_step: u64,
    pub tensors: Vec<TensorEntry>,
}

/// Episode geometry recorded alongside the weights.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeGeometry {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

pub fn save_checkpoint(
    model: &FewShotModel<f32>,
    geometry: EpisodeGeometry,
    seed: u64,
    best_val_accuracy: f64,
    best_step: u64,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(model, geometry, seed, best_val_accuracy, best_step);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CoreError::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn encode_checkpoint(
    model: &FewShotModel<f32>,
    geometry: EpisodeGeometry,
    seed: u64,
    best_val_accuracy: f64,
    best_step: u64,
) -> Vec<u8> {
    let mut tensors = Vec::new();
    for p in model.store.params() {
        tensors.push(TensorEntry { name: p.name().to_string(), shape: p.shape(), kind: "param".into() });
    }
    for b in model.store.buffers() {
        tensors.push(TensorEntry {
            name: b.name().to_string(),
            shape: b.value().shape().to_vec(),
            kind: "buffer".into(),
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        model: model.config.clone(),
        n_way: geometry.n_way,
        k_shot: geometry.k_shot,
        q_query: geometry.q_query,
        seed,
        best_val_accuracy,
        best_step,
        tensors,
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serialize");

    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    for t in model.store.snapshot() {
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut hasher = Fnv1a::new();
    hasher.update(&bytes);
    bytes.extend_from_slice(&hasher.finish().to_le_bytes());
    bytes
}

pub fn load_checkpoint(path: &Path) -> Result<(FewShotModel<f32>, CheckpointManifest)> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FewShotModel<f32>, CheckpointManifest)> {
    let fail = |msg: &str| CoreError::Checkpoint(msg.to_string());
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(fail("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fail("bad magic bytes"));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored_sum = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let mut hasher = Fnv1a::new();
    hasher.update(body);
    if hasher.finish() != stored_sum {
        return Err(fail("checksum mismatch (truncated or corrupt file)"));
    }

    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if 12 + manifest_len > body.len() {
        return Err(fail("manifest length exceeds file size"));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[12..12 + manifest_len])
        .map_err(|e| CoreError::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "format version {} unsupported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }

    let declared: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let data = &body[12 + manifest_len..];
    if data.len() != declared * 4 {
        return Err(fail("parameter payload length mismatch"));
    }

    let model: FewShotModel<f32> = FewShotModel::build(manifest.model.clone(), manifest.seed)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .store
        .params()
        .iter()
        .map(|p| (p.name().to_string(), p.shape()))
        .chain(model.store.buffers().iter().map(|b| (b.name().to_string(), b.value().shape().to_vec())))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(fail("tensor list does not match the rebuilt model"));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if name != &entry.name || shape != &entry.shape {
            return Err(CoreError::Checkpoint(format!(
                "tensor '{}' {:?} does not match the rebuilt model's '{}' {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
    }

    let mut offset = 0usize;
    let mut snapshot = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for i in 0..numel {
            let at = offset + i * 4;
            values.push(f32::from_le_bytes(data[at..at + 4].try_into().expect("4 bytes")));
        }
        offset += numel * 4;
        snapshot.push(Tensor::from_vec(&entry.shape, values));
    }
    model.store.restore(&snapshot);
    Ok((model, manifest))
}
