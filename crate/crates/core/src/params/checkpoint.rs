//! Checkpoint files: a JSON manifest plus a little-endian `f64` blob.
//!
//! ```text
//! <dir>/manifest.json  {"format":"bitfit-checkpoint","version":1,"dtype":"f64-le",
//!                       "total_bytes":N,"entries":[{"name","shape","offset"}...]}
//! <dir>/params.bin     entries back to back; `offset` is in bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::store::ParameterStore;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "bitfit-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub total_bytes: u64,
    pub entries: Vec<ManifestEntry>,
}

pub fn encode(store: &ParameterStore) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(store.total_coords() * 8);
    let mut entries = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        dtype: "f64-le".to_string(),
        total_bytes: blob.len() as u64,
        entries,
    };
    (manifest, blob)
}

pub fn decode(manifest: &Manifest, blob: &[u8], origin: &Path) -> Result<ParameterStore> {
    let bad = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f64-le" {
        return Err(bad(format!(
            "unsupported checkpoint {} v{} ({})",
            manifest.format, manifest.version, manifest.dtype
        )));
    }
    if blob.len() as u64 != manifest.total_bytes {
        return Err(bad(format!(
            "blob is {} bytes, manifest says {}",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut store = ParameterStore::new();
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 8;
        if end > blob.len() {
            return Err(bad(format!("entry `{}` runs past the blob", e.name)));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = encode(store);
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ParameterStore> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let blob_path = dir.join(BLOB_FILE);
    for p in [&manifest_path, &blob_path] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    decode(&manifest, &blob, dir)
}
