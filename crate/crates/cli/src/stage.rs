//! Stage records and provenance stamps.
//!
//! Each completed stage leaves a `stage.json` naming the stage key (a hash of
//! exactly the inputs that determine its outputs), the whole-run config hash,
//! the tool version and a SHA-256 per output file. A stage whose record
//! matches is skipped; one whose record carries another key is never
//! overwritten.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// `CARGO_PKG_VERSION+git-describe`, or the bare package version outside a
/// checkout.
pub const VERSION: &str = env!("DISTORTKD_VERSION");

const STAGE_FORMAT: &str = "distortkd-stage";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub version: String,
    pub stage: String,
    pub stage_key: String,
}

impl Provenance {
    pub fn csv_comment(&self) -> String {
        format!(
            "# config_sha256={} version={} stage={} stage_key={}\n",
            self.config_sha256, self.version, self.stage, self.stage_key
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub format: String,
    pub stage: String,
    pub version: String,
    pub config_sha256: String,
    pub stage_key: String,
    pub seed: u64,
    /// Upstream stage name to its stage key.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the stage's base directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

/// Where a stage lives and how to rebuild it.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    /// Outputs are listed relative to this directory.
    pub base: PathBuf,
    pub record: PathBuf,
    pub key: String,
    /// Subcommand that produces this stage, for error messages.
    pub command: String,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

fn stamped(value: &impl Serialize, prov: &Provenance) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(map) => {
            map.insert("provenance".into(), serde_json::to_value(prov)?);
            Ok(v)
        }
        None => Ok(serde_json::json!({ "provenance": prov, "value": v })),
    }
}

/// Writes `value` as JSON with a top-level `provenance` object added.
/// Readers deserialize into the original type and ignore the extra key.
pub fn write_json(path: &Path, value: &impl Serialize, prov: &Provenance, pretty: bool) -> Result<()> {
    let v = stamped(value, prov)?;
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(&v)?
    } else {
        serde_json::to_vec(&v)?
    };
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Adds `provenance` to a JSON object already on disk (files written by the
/// core library).
pub fn stamp_json_file(path: &Path, prov: &Provenance) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let v: serde_json::Value = serde_json::from_slice(&bytes)?;
    write_json(path, &v, prov, true)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// JSON lines with a provenance header line.
pub fn write_jsonl(path: &Path, body: &str, prov: &Provenance) -> Result<()> {
    let mut text = serde_json::to_string(&serde_json::json!({ "provenance": prov }))?;
    text.push('\n');
    text.push_str(body);
    write_bytes(path, text.as_bytes())
}

impl Stage {
    pub fn new(name: impl Into<String>, base: PathBuf, record: PathBuf, key: String, command: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base,
            record,
            key,
            command: command.into(),
        }
    }

    /// A stage whose record is `<dir>/stage.json`.
    pub fn in_dir(name: impl Into<String>, dir: PathBuf, key: String, command: impl Into<String>) -> Self {
        let record = dir.join("stage.json");
        Self::new(name, dir, record, key, command)
    }

    pub fn provenance(&self, config_sha256: &str) -> Provenance {
        Provenance {
            config_sha256: config_sha256.to_string(),
            version: VERSION.to_string(),
            stage: self.name.clone(),
            stage_key: self.key.clone(),
        }
    }

    pub fn read_record(&self) -> Result<Option<StageRecord>> {
        if !self.record.exists() {
            return Ok(None);
        }
        let rec: StageRecord = read_json(&self.record)?;
        if rec.format != STAGE_FORMAT {
            return Err(CliError::Config(format!("{} is not a stage record", self.record.display())));
        }
        Ok(Some(rec))
    }

    fn verify(&self, rec: &StageRecord) -> Result<()> {
        for (rel, hash) in &rec.outputs {
            let path = self.base.join(rel);
            if !path.exists() || file_sha256(&path)? != *hash {
                return Err(CliError::Corrupt {
                    stage: self.name.clone(),
                    path,
                });
            }
        }
        Ok(())
    }

    /// `Ok(Some(record))` when the stage is already complete under this key,
    /// `Ok(None)` when it should run, and an error when the directory holds
    /// a stage produced under a different key.
    pub fn existing(&self) -> Result<Option<StageRecord>> {
        match self.read_record()? {
            None => Ok(None),
            Some(rec) if rec.stage_key == self.key => {
                self.verify(&rec)?;
                Ok(Some(rec))
            }
            Some(rec) => Err(CliError::Overwrite {
                stage: self.name.clone(),
                path: self.base.clone(),
                found: rec.stage_key,
                expected: self.key.clone(),
            }),
        }
    }

    /// The record of an upstream stage this run depends on.
    pub fn require(&self) -> Result<StageRecord> {
        let rec = self.read_record()?.ok_or_else(|| CliError::MissingStage {
            stage: self.name.clone(),
            command: self.command.clone(),
        })?;
        if rec.stage_key != self.key {
            return Err(CliError::StaleStage {
                stage: self.name.clone(),
                command: self.command.clone(),
            });
        }
        self.verify(&rec)?;
        Ok(rec)
    }

    /// Hashes `outputs` and writes the record, completing the stage.
    pub fn finish(
        &self,
        config_sha256: &str,
        seed: u64,
        inputs: &[&Stage],
        outputs: &[&str],
        seconds: f64,
    ) -> Result<StageRecord> {
        let mut hashes = BTreeMap::new();
        for rel in outputs {
            hashes.insert(rel.to_string(), file_sha256(&self.base.join(rel))?);
        }
        let rec = StageRecord {
            format: STAGE_FORMAT.into(),
            stage: self.name.clone(),
            version: VERSION.into(),
            config_sha256: config_sha256.into(),
            stage_key: self.key.clone(),
            seed,
            inputs: inputs.iter().map(|s| (s.name.clone(), s.key.clone())).collect(),
            outputs: hashes,
            seconds,
        };
        let mut bytes = serde_json::to_vec_pretty(&rec)?;
        bytes.push(b'\n');
        write_bytes(&self.record, &bytes)?;
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(dir: &Path, key: &str) -> Stage {
        Stage::in_dir("demo", dir.to_path_buf(), key.into(), "demo")
    }

    #[test]
    fn lifecycle() {
        let tmp = tempfile::tempdir().unwrap();
        let s = stage(tmp.path(), "k1");
        assert!(s.existing().unwrap().is_none());
        assert!(matches!(s.require(), Err(CliError::MissingStage { .. })));

        write_bytes(&tmp.path().join("out.txt"), b"hello").unwrap();
        s.finish("cfg", 3, &[], &["out.txt"], 0.0).unwrap();
        assert_eq!(s.existing().unwrap().unwrap().seed, 3);
        assert_eq!(s.require().unwrap().stage_key, "k1");

        let other = stage(tmp.path(), "k2");
        assert!(matches!(other.existing(), Err(CliError::Overwrite { .. })));
        assert!(matches!(other.require(), Err(CliError::StaleStage { .. })));

        write_bytes(&tmp.path().join("out.txt"), b"tampered").unwrap();
        assert!(matches!(s.require(), Err(CliError::Corrupt { .. })));
    }

    #[test]
    fn stamped_json_reads_back_as_the_original_type() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Thing {
            a: u32,
        }
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("t.json");
        let prov = stage(tmp.path(), "k").provenance("abc");
        write_json(&path, &Thing { a: 7 }, &prov, true).unwrap();
        let back: Thing = read_json(&path).unwrap();
        assert_eq!(back, Thing { a: 7 });
        let raw: serde_json::Value = read_json(&path).unwrap();
        assert_eq!(raw["provenance"]["config_sha256"], "abc");
        assert_eq!(raw["provenance"]["version"], VERSION);
    }
}
