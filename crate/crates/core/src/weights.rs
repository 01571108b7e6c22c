//! Weight persistence: `weights.json` (manifest) plus `weights.bin`, a raw
//! blob of little-endian `f32` values laid out in manifest order.

use std::fs;
use std::io::{self, ErrorKind};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Scalar;

pub const MANIFEST_FILE: &str = "weights.json";
pub const BLOB_FILE: &str = "weights.bin";
const FORMAT: &str = "kdl-weights/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub total_bytes: usize,
}

pub fn config_hash(config: &ModelConfig) -> String {
    hex::encode(Sha256::digest(config.to_json().as_bytes()))
}

pub fn save_weights<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.state() {
        t.ensure_finite("save_weights").map_err(|e| e.at(|| name.clone()))?;
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config_hash: config_hash(model.config()),
        config: model.config().clone(),
        tensors,
        total_bytes: blob.len(),
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Path of the first field where two JSON values differ, in key order.
fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => first_difference(u, v, &sub),
                    _ => Some(sub),
                }
            })
        }
        _ if a == b => None,
        _ => Some(if path.is_empty() { "<root>".into() } else { path.to_string() }),
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    if text.trim().is_empty() {
        return Err(io::Error::new(ErrorKind::UnexpectedEof, "weights manifest is empty").into());
    }
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("unknown weights format {:?}", manifest.format)));
    }
    Ok(manifest)
}

/// Builds a model from `config` and fills it with the saved weights.
pub fn load_weights<T: Scalar>(config: &ModelConfig, dir: &Path) -> Result<Model<T>> {
    let manifest = read_manifest(dir)?;
    let want = serde_json::to_value(config)?;
    let have = serde_json::to_value(&manifest.config)?;
    if let Some(field) = first_difference(&have, &want, "") {
        return Err(Error::Format(format!("weights were saved for a different config: field `{field}` differs")));
    }
    if manifest.config_hash != config_hash(config) {
        return Err(Error::Format("config hash does not match manifest".into()));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;
    if blob.len() < manifest.total_bytes {
        return Err(io::Error::new(
            ErrorKind::UnexpectedEof,
            format!("weights blob truncated: {} of {} bytes", blob.len(), manifest.total_bytes),
        )
        .into());
    }
    let mut model = Model::<T>::build(config)?;
    let state = model.state_mut();
    if state.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            state.len()
        )));
    }
    for ((name, t), entry) in state.into_iter().zip(&manifest.tensors) {
        if name != entry.name || t.shape() != entry.shape.as_slice() || entry.dtype != "f32" {
            return Err(Error::Format(format!(
                "tensor `{}` {:?} ({}) does not match model tensor `{}` {:?}",
                entry.name,
                entry.shape,
                entry.dtype,
                name,
                t.shape()
            )));
        }
        let end = entry.offset + 4 * t.len();
        let bytes = blob.get(entry.offset..end).ok_or_else(|| {
            io::Error::new(ErrorKind::UnexpectedEof, format!("tensor `{name}` runs past the blob"))
        })?;
        for (v, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64);
        }
    }
    Ok(model)
}
