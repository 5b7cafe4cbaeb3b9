//! Checkpoint directories: `manifest.json` plus `weights.bin`, verified by
//! SHA-256 on load.

use std::fs;
use std::path::Path;

use mmkd_autograd::ParamStore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";
const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn store_checksum(store: &ParamStore) -> String {
    sha256_hex(&store.to_bytes())
}

/// Short content address of any serialisable value.
pub fn content_key(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(sha256_hex(&bytes)[..16].to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub classes: Vec<String>,
    pub seed: u64,
    pub checksum: String,
    /// Model-specific configuration needed to rebuild the architecture.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(kind: &str, classes: &[String], seed: u64, config: serde_json::Value) -> Self {
        Self { version: FORMAT_VERSION, kind: kind.into(), classes: classes.to_vec(), seed, checksum: String::new(), config }
    }
}

pub fn save(dir: &Path, mut manifest: Manifest, store: &ParamStore) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = store.to_bytes();
    manifest.checksum = sha256_hex(&bytes);
    let w = dir.join(WEIGHTS);
    fs::write(&w, &bytes).map_err(|e| Error::io(&w, e))?;
    let m = dir.join(MANIFEST);
    fs::write(&m, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&m, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m = dir.join(MANIFEST);
    let raw = fs::read(&m).map_err(|e| Error::io(&m, e))?;
    let manifest: Manifest = serde_json::from_slice(&raw)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Config(format!("{}: unsupported checkpoint version {}", m.display(), manifest.version)));
    }
    Ok(manifest)
}

pub fn load(dir: &Path, kind: &str) -> Result<(Manifest, ParamStore)> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != kind {
        return Err(Error::Config(format!("{} holds a {} checkpoint, expected {kind}", dir.display(), manifest.kind)));
    }
    let w = dir.join(WEIGHTS);
    let bytes = fs::read(&w).map_err(|e| Error::io(&w, e))?;
    if sha256_hex(&bytes) != manifest.checksum {
        return Err(Error::Config(format!("{}: checksum mismatch", w.display())));
    }
    Ok((manifest, ParamStore::from_bytes(&bytes)?))
}

/// Copies values from `loaded` into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::Config(format!("checkpoint has {} tensors, model expects {}", loaded.len(), target.len())));
    }
    for id in target.ids().collect::<Vec<_>>() {
        let src = loaded
            .find(target.name(id))
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {}", target.name(id))))?;
        let v = loaded.get(src);
        if v.dim() != target.get(id).dim() {
            return Err(Error::Config(format!("tensor {} has the wrong shape", target.name(id))));
        }
        *target.get_mut(id) = v.clone();
    }
    Ok(())
}

/// Like [`restore_into`] but tolerates extra tensors in `loaded`.
pub fn restore_matching(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    for id in target.ids().collect::<Vec<_>>() {
        let src = loaded
            .find(target.name(id))
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {}", target.name(id))))?;
        if loaded.get(src).dim() != target.get(id).dim() {
            return Err(Error::Config(format!("tensor {} has the wrong shape", target.name(id))));
        }
        *target.get_mut(id) = loaded.get(src).clone();
    }
    Ok(())
}
