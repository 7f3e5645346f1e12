use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "distortkd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON container of named f64 arrays. `serde_json` prints the shortest
/// round-tripping decimal, so save/load is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Model family, e.g. `teacher` or `student`.
    pub kind: String,
    pub config_fingerprint: String,
    pub seed: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_store(
        kind: &str,
        config_fingerprint: &str,
        seed: u64,
        meta: serde_json::Value,
        store: &ParamStore,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            config_fingerprint: config_fingerprint.into(),
            seed,
            meta,
            params: store
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for a in &self.params {
            let t = Tensor::new(a.shape.clone(), a.data.clone())
                .map_err(|_| Error::Checkpoint(format!("array `{}` has inconsistent shape", a.name)))?;
            store.add(a.name.clone(), t)?;
        }
        Ok(store)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 over the little-endian bytes of every array, in order.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.params {
            h.update(a.name.as_bytes());
            for &d in &a.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &x in &a.data {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
