use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    generate_noise_banks, generate_utterances, wav_read, wav_write, BankName, CorpusConfig, NoiseBank, NoiseBanks,
    NoiseClip, Split, Utterance,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: String,
    pub split: Split,
    pub class_label: usize,
    pub phones: Vec<usize>,
    pub n_samples: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub bank: BankName,
    pub heldout: bool,
    pub index: usize,
    pub path: PathBuf,
}

/// On-disk description of a generated corpus. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config: CorpusConfig,
    pub sample_rate: u32,
    /// SHA-256 over every PCM16 sample of every utterance and noise clip.
    pub audio_sha256: String,
    pub utterances: Vec<UtteranceEntry>,
    pub noise: Vec<NoiseEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub config: CorpusConfig,
    pub utterances: Vec<Utterance>,
    pub banks: NoiseBanks,
}

fn hash_samples(hasher: &mut Sha256, samples: &[f64]) {
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        hasher.update(q.to_le_bytes());
    }
}

impl Corpus {
    pub fn generate(config: &CorpusConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            seed,
            config: config.clone(),
            utterances: generate_utterances(config, seed)?,
            banks: generate_noise_banks(config, seed)?,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn audio_sha256(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.utterances {
            h.update(u.id.as_bytes());
            hash_samples(&mut h, &u.wave.samples);
        }
        for bank in self.banks.iter() {
            for clip in &bank.clips {
                h.update(bank.name.as_str().as_bytes());
                hash_samples(&mut h, &clip.wave.samples);
            }
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            seed: self.seed,
            config: self.config.clone(),
            sample_rate: self.config.sample_rate,
            audio_sha256: self.audio_sha256(),
            utterances: self
                .utterances
                .iter()
                .map(|u| UtteranceEntry {
                    id: u.id.clone(),
                    split: u.split,
                    class_label: u.class_label,
                    phones: u.phones.clone(),
                    n_samples: u.wave.len(),
                    path: PathBuf::from("wav").join(u.split.as_str()).join(format!("{}.wav", u.id)),
                })
                .collect(),
            noise: self
                .banks
                .iter()
                .flat_map(|b| {
                    b.clips.iter().map(|c| NoiseEntry {
                        bank: b.name,
                        heldout: b.heldout,
                        index: c.index,
                        path: PathBuf::from("noise").join(b.name.as_str()).join(format!("{:03}.wav", c.index)),
                    })
                })
                .collect(),
        }
    }

    /// Writes WAV files and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<CorpusManifest> {
        let manifest = self.manifest();
        for (u, e) in self.utterances.iter().zip(&manifest.utterances) {
            wav_write(&dir.join(&e.path), &u.wave)?;
        }
        let clips = self.banks.iter().flat_map(|b| b.clips.iter());
        for (c, e) in clips.zip(&manifest.noise) {
            wav_write(&dir.join(&e.path), &c.wave)?;
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Loads a corpus written by [`Corpus::write`], verifying the audio hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let mut utterances = Vec::with_capacity(manifest.utterances.len());
        for e in &manifest.utterances {
            let wave = wav_read(&dir.join(&e.path))?;
            if wave.sample_rate != manifest.sample_rate {
                return Err(Error::Config(format!(
                    "{} has sample rate {}, corpus uses {}",
                    e.path.display(),
                    wave.sample_rate,
                    manifest.sample_rate
                )));
            }
            utterances.push(Utterance {
                id: e.id.clone(),
                wave,
                class_label: e.class_label,
                split: e.split,
                phones: e.phones.clone(),
            });
        }
        let mut banks: Vec<NoiseBank> = Vec::new();
        for e in &manifest.noise {
            let wave = wav_read(&dir.join(&e.path))?;
            let clip = NoiseClip {
                bank: e.bank,
                index: e.index,
                wave,
            };
            match banks.iter_mut().find(|b| b.name == e.bank) {
                Some(b) => b.clips.push(clip),
                None => banks.push(NoiseBank {
                    name: e.bank,
                    heldout: e.heldout,
                    clips: vec![clip],
                }),
            }
        }
        let corpus = Corpus {
            seed: manifest.seed,
            config: manifest.config.clone(),
            utterances,
            banks: NoiseBanks::new(banks)?,
        };
        let hash = corpus.audio_sha256();
        if hash != manifest.audio_sha256 {
            return Err(Error::Config(format!(
                "corpus audio hash {hash} does not match manifest {}",
                manifest.audio_sha256
            )));
        }
        Ok(corpus)
    }
}
