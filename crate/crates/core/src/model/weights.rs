//! Weights file layout:
//!
//! ```text
//! 8 bytes   magic "MMGCNW01"
//! 8 bytes   header length n, u64 little-endian
//! n bytes   JSON header {config_digest, config, tensors: [{name, shape}]}
//! rest      f64 little-endian values of each tensor, in header order
//! ```
//!
//! Tensors are listed in sorted name order, so equal parameters always
//! produce identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mmgcn, ModelConfig};
use crate::error::{Error, Result};
use crate::fsio;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MMGCNW01";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config_digest: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Hex SHA-256 of the config's JSON serialization.
pub fn config_digest(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

pub fn encode_weights(cfg: &ModelConfig, params: &ParamStore) -> Vec<u8> {
    let header = Header {
        config_digest: config_digest(cfg),
        config: cfg.clone(),
        tensors: params
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.value_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.iter() {
        out.extend_from_slice(&fsio::f64_to_le_bytes(t.data()));
    }
    out
}

/// Parse weights bytes; `origin` names the source in errors.
pub fn decode_weights(bytes: &[u8], origin: &Path) -> Result<(ModelConfig, ParamStore)> {
    let bad = |msg: String| Error::validation(origin, msg);
    if bytes.len() < 16 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(bad("not a weights file (bad magic)".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(n))
        .ok_or_else(|| bad(format!("truncated header: {n} bytes declared")))?;
    let header: Header = serde_json::from_slice(body).map_err(|source| Error::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    if header.config_digest != config_digest(&header.config) {
        return Err(bad("config digest does not match the embedded config".into()));
    }
    let mut data = &bytes[16 + n..];
    let mut params = ParamStore::new();
    for e in header.tensors {
        let len: usize = e.shape.iter().product();
        if data.len() < 8 * len {
            return Err(bad(format!("truncated data for tensor {}", e.name)));
        }
        let values = fsio::f64_from_le_bytes(&data[..8 * len]).expect("multiple of 8");
        data = &data[8 * len..];
        params.insert(e.name, Tensor::new(e.shape, values)?);
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes after tensor data", data.len())));
    }
    Mmgcn::new(header.config.clone())?
        .check_params(&params)
        .map_err(|e| bad(e.to_string()))?;
    Ok((header.config, params))
}

pub fn save_weights(path: &Path, cfg: &ModelConfig, params: &ParamStore) -> Result<()> {
    fsio::write_atomic(path, &encode_weights(cfg, params))
}

pub fn load_weights(path: &Path) -> Result<(ModelConfig, ParamStore)> {
    decode_weights(&fsio::read(path)?, path)
}
