//! Distorted test audio, built once per evaluation seed and shared by every
//! model under comparison.
//!
//! On disk a cache is `manifest.json` plus one little-endian `f64` blob per
//! (split, condition) set. Loading re-hashes every blob, so two models can
//! only be compared on byte-identical inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentor::{build_eval_condition, AugmentPolicy, Condition, DistortionLabel};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::synth_corpus::{Corpus, Split};
use crate::wave::Waveform;

const FORMAT: &str = "distortkd-condition-cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SetKey {
    pub split: Split,
    pub condition: Condition,
}

impl SetKey {
    pub fn new(split: Split, condition: Condition) -> Self {
        Self { split, condition }
    }

    fn file_name(self) -> String {
        format!("{}_{}.f64", self.split.as_str(), self.condition.as_str())
    }
}

impl std::fmt::Display for SetKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.split.as_str(), self.condition)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEntry {
    pub id: String,
    pub class_label: usize,
    pub wave: Waveform,
    /// Distortion class of the realized plan; `None` for held-out noise.
    pub label: Option<DistortionLabel>,
}

/// One split rendered under one condition, in ascending utterance-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub key: SetKey,
    pub entries: Vec<ConditionEntry>,
}

impl ConditionSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn waves(&self) -> impl Iterator<Item = &Waveform> {
        self.entries.iter().map(|e| &e.wave)
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class_label).collect()
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.key.to_string().as_bytes());
        for e in &self.entries {
            h.update(e.id.as_bytes());
            h.update((e.class_label as u64).to_le_bytes());
            if let Some(l) = e.label {
                h.update(l.0);
            }
            h.update(e.wave.sample_rate.to_le_bytes());
            h.update((e.wave.len() as u64).to_le_bytes());
            for s in &e.wave.samples {
                h.update(s.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryMeta {
    id: String,
    class_label: usize,
    n_samples: usize,
    label: Option<DistortionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SetMeta {
    key: SetKey,
    sha256: String,
    entries: Vec<EntryMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    eval_seed: u64,
    corpus_sha256: String,
    policy_sha256: String,
    sample_rate: u32,
    sets: Vec<SetMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCache {
    pub eval_seed: u64,
    pub corpus_sha256: String,
    pub policy_sha256: String,
    pub sets: Vec<ConditionSet>,
}

fn policy_sha256(policy: &AugmentPolicy) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(policy)?)))
}

impl ConditionCache {
    /// Renders every requested set. Utterance `i` of a set draws its plan from
    /// the substream `(eval_seed, "eval-condition/<split>/<condition>", i)`,
    /// so the same audio comes out whatever else is requested.
    pub fn build(corpus: &Corpus, policy: &AugmentPolicy, keys: &[SetKey], eval_seed: u64) -> Result<Self> {
        let mut sets = Vec::with_capacity(keys.len());
        for &key in keys {
            if sets.iter().any(|s: &ConditionSet| s.key == key) {
                continue;
            }
            let mut utts: Vec<_> = corpus.split(key.split).collect();
            utts.sort_by(|a, b| a.id.cmp(&b.id));
            let label = format!("eval-condition/{key}");
            let entries = utts
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    let mut rng = substream(eval_seed, &label, i as u64);
                    let sample = build_eval_condition(&u.wave, key.condition, &corpus.banks, policy, &mut rng)?;
                    Ok(ConditionEntry {
                        id: u.id.clone(),
                        class_label: u.class_label,
                        label: DistortionLabel::from_spec(&sample.spec).ok(),
                        wave: sample.wave,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(ConditionSet { key, entries });
        }
        Ok(Self {
            eval_seed,
            corpus_sha256: corpus.audio_sha256(),
            policy_sha256: policy_sha256(policy)?,
            sets,
        })
    }

    pub fn get(&self, split: Split, condition: Condition) -> Result<&ConditionSet> {
        let key = SetKey::new(split, condition);
        self.sets
            .iter()
            .find(|s| s.key == key)
            .ok_or_else(|| Error::Eval(format!("condition cache has no set {key}")))
    }

    /// Hash over all sets, in order.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.eval_seed.to_le_bytes());
        h.update(self.corpus_sha256.as_bytes());
        h.update(self.policy_sha256.as_bytes());
        for s in &self.sets {
            h.update(s.sha256().as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sample_rate = self
            .sets
            .iter()
            .flat_map(|s| s.entries.first())
            .map(|e| e.wave.sample_rate)
            .next()
            .unwrap_or(0);
        let mut metas = Vec::with_capacity(self.sets.len());
        for set in &self.sets {
            let mut bytes = Vec::new();
            for e in &set.entries {
                for s in &e.wave.samples {
                    bytes.extend_from_slice(&s.to_le_bytes());
                }
            }
            let path = dir.join(set.key.file_name());
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            metas.push(SetMeta {
                key: set.key,
                sha256: set.sha256(),
                entries: set
                    .entries
                    .iter()
                    .map(|e| EntryMeta {
                        id: e.id.clone(),
                        class_label: e.class_label,
                        n_samples: e.wave.len(),
                        label: e.label,
                    })
                    .collect(),
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            eval_seed: self.eval_seed,
            corpus_sha256: self.corpus_sha256.clone(),
            policy_sha256: self.policy_sha256.clone(),
            sample_rate,
            sets: metas,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Reads a cache and checks every blob against its recorded hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.format != FORMAT {
            return Err(Error::Eval(format!("{} is not a condition cache", path.display())));
        }
        let mut sets = Vec::with_capacity(manifest.sets.len());
        for meta in &manifest.sets {
            let path = dir.join(meta.key.file_name());
            let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let expected: usize = meta.entries.iter().map(|e| e.n_samples * 8).sum();
            if blob.len() != expected {
                return Err(Error::Eval(format!(
                    "{}: {} bytes, manifest expects {expected}",
                    path.display(),
                    blob.len()
                )));
            }
            let mut values = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")));
            let entries = meta
                .entries
                .iter()
                .map(|e| ConditionEntry {
                    id: e.id.clone(),
                    class_label: e.class_label,
                    label: e.label,
                    wave: Waveform {
                        samples: values.by_ref().take(e.n_samples).collect(),
                        sample_rate: manifest.sample_rate,
                    },
                })
                .collect();
            let set = ConditionSet { key: meta.key, entries };
            if set.sha256() != meta.sha256 {
                return Err(Error::Eval(format!("condition cache set {} fails its hash check", meta.key)));
            }
            sets.push(set);
        }
        Ok(Self {
            eval_seed: manifest.eval_seed,
            corpus_sha256: manifest.corpus_sha256,
            policy_sha256: manifest.policy_sha256,
            sets,
        })
    }

    /// Loads the cache in `dir` if present, otherwise builds and writes it.
    /// An existing cache built from a different corpus, policy or seed, or
    /// missing a requested set, is an error rather than a silent rebuild.
    pub fn load_or_build(
        dir: &Path,
        corpus: &Corpus,
        policy: &AugmentPolicy,
        keys: &[SetKey],
        eval_seed: u64,
    ) -> Result<Self> {
        if !dir.join("manifest.json").exists() {
            let cache = Self::build(corpus, policy, keys, eval_seed)?;
            cache.write(dir)?;
            return Ok(cache);
        }
        let cache = Self::load(dir)?;
        cache.check_compatible(corpus, policy, eval_seed)?;
        for &key in keys {
            cache.get(key.split, key.condition)?;
        }
        Ok(cache)
    }

    pub fn check_compatible(&self, corpus: &Corpus, policy: &AugmentPolicy, eval_seed: u64) -> Result<()> {
        let mut problems = Vec::new();
        if self.eval_seed != eval_seed {
            problems.push(format!("eval seed {} != {eval_seed}", self.eval_seed));
        }
        if self.corpus_sha256 != corpus.audio_sha256() {
            problems.push("corpus audio differs".to_string());
        }
        if self.policy_sha256 != policy_sha256(policy)? {
            problems.push("augmentation policy differs".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Eval(format!("condition cache mismatch: {}", problems.join("; "))))
        }
    }
}
