//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `NUMNET01`, a little-endian u64 manifest
//! length, the UTF-8 JSON manifest, then the raw little-endian IEEE-754
//! values row-major. The manifest lists entries in name order with shapes
//! and byte offsets into the data section. Alongside each parameter the
//! file stores its EMA shadow under `<name>#ema` and, so that training can
//! resume exactly, the Adam moments under `<name>#m` / `<name>#v`. The
//! manifest also records the value dtype ("f32" for training checkpoints,
//! "f64" for test-mode runs), the optimizer step count, the epoch, and an
//! arbitrary JSON config blob supplied by the caller.

use super::params::{ParamEntry, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"NUMNET01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic (not a checkpoint file)")]
    BadMagic,
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("version error: {0}")]
    Version(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    adam_step: u64,
    epoch: u64,
    config: Value,
    entries: Vec<ManifestEntry>,
}

/// Everything a checkpoint carries besides raw parameter values.
#[derive(Debug)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub config: Value,
    pub dtype: String,
}

pub fn save_checkpoint<S: Real>(
    params: &ParamStore<S>,
    epoch: u64,
    config: &Value,
) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let push = |name: String, t: &Tensor<S>, entries: &mut Vec<ManifestEntry>, data: &mut Vec<u8>| {
        entries.push(ManifestEntry {
            name,
            shape: [t.rows(), t.cols()],
            offset: data.len() as u64,
        });
        for &v in t.data() {
            v.write_le(data);
        }
    };
    for (name, e) in params.iter() {
        push(name.clone(), &e.value, &mut entries, &mut data);
        push(format!("{name}#ema"), &e.ema, &mut entries, &mut data);
        push(format!("{name}#m"), &e.m, &mut entries, &mut data);
        push(format!("{name}#v"), &e.v, &mut entries, &mut data);
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        dtype: S::DTYPE.to_string(),
        adam_step: params.step,
        epoch,
        config: config.clone(),
        entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(8 + 8 + manifest_bytes.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&data);
    out
}

/// Peek at the manifest without decoding values (to learn the dtype).
pub fn read_meta(bytes: &[u8]) -> Result<CheckpointMeta, CheckpointError> {
    let (manifest, _) = split(bytes)?;
    Ok(CheckpointMeta {
        epoch: manifest.epoch,
        config: manifest.config,
        dtype: manifest.dtype,
    })
}

fn split(bytes: &[u8]) -> Result<(Manifest, &[u8]), CheckpointError> {
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + len {
        return Err(CheckpointError::Manifest("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + len])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    Ok((manifest, &bytes[16 + len..]))
}

pub fn load_checkpoint<S: Real>(
    bytes: &[u8],
) -> Result<(ParamStore<S>, CheckpointMeta), CheckpointError> {
    let (manifest, data) = split(bytes)?;
    if manifest.dtype != S::DTYPE {
        return Err(CheckpointError::Version(format!(
            "checkpoint dtype is {} but {} was requested",
            manifest.dtype,
            S::DTYPE
        )));
    }
    let mut tensors: BTreeMap<String, Tensor<S>> = BTreeMap::new();
    for e in &manifest.entries {
        let count = e.shape[0] * e.shape[1];
        let start = e.offset as usize;
        let end = start + count * S::BYTES;
        if end > data.len() {
            return Err(CheckpointError::Manifest(format!(
                "entry '{}' runs past end of data",
                e.name
            )));
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            values.push(S::read_le(&data[start + i * S::BYTES..]));
        }
        let t = Tensor::from_vec(e.shape[0], e.shape[1], values)
            .map_err(|err| CheckpointError::Manifest(err.to_string()))?;
        tensors.insert(e.name.clone(), t);
    }

    let mut store = ParamStore::new();
    store.step = manifest.adam_step;
    let names: Vec<String> = tensors
        .keys()
        .filter(|n| !n.contains('#'))
        .cloned()
        .collect();
    for name in names {
        let mut value = tensors.remove(&name).unwrap();
        value.requires_grad = true;
        let (r, c) = value.shape();
        let take = |suffix: &str, tensors: &mut BTreeMap<String, Tensor<S>>| {
            tensors.remove(&format!("{name}#{suffix}"))
        };
        let ema = take("ema", &mut tensors).unwrap_or_else(|| value.clone());
        let m = take("m", &mut tensors).unwrap_or_else(|| Tensor::zeros(r, c));
        let v = take("v", &mut tensors).unwrap_or_else(|| Tensor::zeros(r, c));
        for (label, t) in [("ema", &ema), ("m", &m), ("v", &v)] {
            if t.shape() != (r, c) {
                return Err(CheckpointError::Version(format!(
                    "state '{name}#{label}' shape {:?} does not match parameter shape {:?}",
                    t.shape(),
                    (r, c)
                )));
            }
        }
        insert_entry(&mut store, &name, value, m, v, ema);
    }
    let meta = CheckpointMeta {
        epoch: manifest.epoch,
        config: manifest.config,
        dtype: manifest.dtype,
    };
    Ok((store, meta))
}

fn insert_entry<S: Real>(
    store: &mut ParamStore<S>,
    name: &str,
    value: Tensor<S>,
    m: Tensor<S>,
    v: Tensor<S>,
    ema: Tensor<S>,
) {
    store.insert(name, value);
    let e: &mut ParamEntry<S> = store.entry_mut(name);
    e.m = m;
    e.v = v;
    e.ema = ema;
}
