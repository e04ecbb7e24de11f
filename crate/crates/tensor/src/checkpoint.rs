//! Checkpoint = JSON manifest (names, shapes, dtype, version, seed, extra
//! metadata) plus a blob of little-endian `f32` values concatenated in
//! manifest order. The blob lives next to the manifest as `<manifest>.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::store::ParameterStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn encode_checkpoint(store: &ParameterStore<f32>, extra: serde_json::Value) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(store.num_scalars() * 4);
    let mut entries = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        entries.push(ManifestEntry { name: name.to_string(), shape: p.value.shape().to_vec(), trainable: p.trainable });
        for x in p.value.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest { version: store.version, dtype: "f32".into(), seed: store.rng_seed, entries, extra };
    (manifest, blob)
}

pub fn decode_checkpoint(manifest: &Manifest, blob: &[u8]) -> Result<ParameterStore<f32>> {
    if manifest.version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {} (expected {CHECKPOINT_VERSION})", manifest.version)));
    }
    if manifest.dtype != "f32" {
        return Err(TensorError::Checkpoint(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    let mut store = ParameterStore::new(manifest.seed);
    let mut offset = 0;
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let end = offset + n * 4;
        if end > blob.len() {
            return Err(TensorError::Checkpoint(format!("blob truncated inside `{}`", e.name)));
        }
        let data = blob[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        store.get_mut(&e.name)?.trainable = e.trainable;
        offset = end;
    }
    if offset != blob.len() {
        return Err(TensorError::Checkpoint(format!("{} trailing bytes in blob", blob.len() - offset)));
    }
    Ok(store)
}

pub fn blob_path(manifest_path: &Path) -> PathBuf {
    let mut s = manifest_path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

/// Writes both files via temp-then-rename.
pub fn save_checkpoint(path: &Path, store: &ParameterStore<f32>, extra: serde_json::Value) -> Result<()> {
    let (manifest, blob) = encode_checkpoint(store, extra);
    write_atomic(&blob_path(path), &blob)?;
    write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore<f32>, serde_json::Value)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    let blob = fs::read(blob_path(path))?;
    let store = decode_checkpoint(&manifest, &blob)?;
    Ok((store, manifest.extra))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
