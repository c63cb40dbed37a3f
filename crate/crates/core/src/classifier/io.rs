//! Versioned model file: magic, format version, a length-prefixed JSON
//! header, then every parameter as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, ClassifierBundle, ClassifierModel, TrainingConfig};
use crate::error::{Error, Result};
use crate::hashing::config_hash;

const MAGIC: &[u8; 8] = b"TRIAGECL";
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: Vec<usize>,
    seed: u64,
    config_hash: String,
    embedding_model: String,
    labels: Vec<String>,
    config: TrainingConfig,
}

pub fn encode_bundle(bundle: &ClassifierBundle) -> Result<Vec<u8>> {
    let header = Header {
        version: MODEL_FILE_VERSION,
        dims: bundle.model.dims().to_vec(),
        seed: bundle.config.seed,
        config_hash: config_hash(&bundle.config),
        embedding_model: bundle.embedding_model.clone(),
        labels: bundle.labels.clone(),
        config: bundle.config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * bundle.model.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in bundle.model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ClassifierBundle> {
    let bad = |m: &str| Error::ModelFile(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a classifier model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FILE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(16..16 + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.config_hash != config_hash(&header.config) {
        return Err(bad("header config hash mismatch"));
    }
    let params_bytes = &bytes[16 + header_len..];
    let expected = param_count(&header.dims);
    if params_bytes.len() != expected * 4 {
        return Err(bad(&format!(
            "expected {expected} parameters, found {} bytes",
            params_bytes.len()
        )));
    }
    let params: Vec<f32> = params_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let model = ClassifierModel::from_params(&header.dims, params)?;
    if header.labels.len() != model.output_dim() {
        return Err(bad("label count does not match output width"));
    }
    Ok(ClassifierBundle {
        embedding_model: header.embedding_model,
        labels: header.labels,
        model,
        config: header.config,
    })
}

pub fn save_bundle(bundle: &ClassifierBundle, path: &Path) -> Result<()> {
    fs::write(path, encode_bundle(bundle)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ClassifierBundle> {
    decode_bundle(&fs::read(path)?)
}
