//! Single-file checkpoint:
//!
//! ```text
//! "ENJCKPT1" | u64 LE header length | JSON header | raw f32 LE blobs
//! ```
//!
//! The header holds the network config, the step, free-form metadata and a
//! table of `(name, shape, offset, len)` entries locating each blob. Offsets
//! are relative to the first byte after the header.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::weights::NetworkWeights;
use super::Part;
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ENJCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    step: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Weights plus any auxiliary tensors (optimiser state) and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub weights: NetworkWeights,
    /// Non-network tensors, e.g. momentum buffers.
    pub extra: BTreeMap<String, Tensor<f32>>,
    pub meta: serde_json::Value,
}

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: msg.into() }
}

impl Checkpoint {
    pub fn new(config: NetworkConfig, weights: NetworkWeights) -> Self {
        Checkpoint { config, weights, extra: BTreeMap::new(), meta: serde_json::Value::Null }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(name) = self.extra.keys().find(|n| Part::of_name(n).is_some() || self.weights.tensors.contains_key(*n)) {
            return Err(Error::InvalidArgument(format!("auxiliary tensor {name} collides with a network prefix")));
        }
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        for (name, t) in self.weights.tensors.iter().chain(&self.extra) {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
                len: t.numel() as u64,
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.config.clone(),
            step: self.weights.step,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt(path, "not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..body])?;
        let blob = &bytes[body..];
        let mut tensors = BTreeMap::new();
        let mut extra = BTreeMap::new();
        let mut expected_end = 0u64;
        for e in header.tensors {
            let start = e.offset as usize;
            let end = start + 4 * e.len as usize;
            if end > blob.len() {
                return Err(corrupt(path, format!("tensor {} runs past end of file", e.name)));
            }
            let data = blob[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(e.shape, data).map_err(|err| corrupt(path, format!("tensor {}: {err}", e.name)))?;
            expected_end = expected_end.max(end as u64);
            if Part::of_name(&e.name).is_some() {
                tensors.insert(e.name, t);
            } else {
                extra.insert(e.name, t);
            }
        }
        if expected_end != blob.len() as u64 {
            return Err(corrupt(path, "trailing bytes after last tensor"));
        }
        let weights = NetworkWeights { tensors, step: header.step };
        weights.validate(&header.config).map_err(|err| corrupt(path, err.to_string()))?;
        Ok(Checkpoint { config: header.config, weights, extra, meta: header.meta })
    }

    /// Atomic write; returns the SHA-256 of the written bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Checkpoint::from_bytes(&bytes, path)
    }
}
