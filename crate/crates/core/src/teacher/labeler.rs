use serde::{Deserialize, Serialize};

use super::encoder::EncoderConfig;
use super::kmeans::{kmeans_fit, KMeans};
use crate::audio_dsp::{log_mel, MelConfig};
use crate::error::{Error, Result};
use crate::synth_corpus::Utterance;
use crate::wave::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub n_clusters: usize,
    pub n_mels: usize,
    pub n_fft: usize,
    pub kmeans_iters: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            n_clusters: 32,
            n_mels: 20,
            n_fft: 256,
            kmeans_iters: 50,
        }
    }
}

/// Frame-level k-means targets over standardized log-mel features, aligned
/// with the encoder's frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeler {
    pub config: LabelerConfig,
    pub mel: MelConfig,
    pub encoder: EncoderConfig,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub codebook: KMeans,
}

fn mel_config(cfg: &LabelerConfig, enc: &EncoderConfig) -> MelConfig {
    MelConfig {
        n_mels: cfg.n_mels,
        n_fft: cfg.n_fft,
        hop: enc.total_stride(),
        centre: enc.frame_centre(0),
    }
}

impl PseudoLabeler {
    /// Fits the codebook on the frames of `utterances` (clean audio).
    pub fn fit(utterances: &[&Utterance], cfg: &LabelerConfig, enc: &EncoderConfig, seed: u64) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Config("no utterances to fit pseudo-labels on".into()));
        }
        let mel = mel_config(cfg, enc);
        let raw: Vec<Vec<f64>> = utterances
            .iter()
            .flat_map(|u| log_mel(&u.wave, &mel, enc.frames(u.wave.len())))
            .collect();
        let dim = cfg.n_mels;
        let n = raw.len().max(1) as f64;
        let mean: Vec<f64> = (0..dim).map(|j| raw.iter().map(|f| f[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..dim)
            .map(|j| (raw.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-6))
            .collect();
        let feats: Vec<Vec<f64>> = raw.iter().map(|f| standardize(f, &mean, &std)).collect();
        let codebook = kmeans_fit(&feats, cfg.n_clusters, cfg.kmeans_iters, seed)?;
        Ok(Self {
            config: cfg.clone(),
            mel,
            encoder: enc.clone(),
            mean,
            std,
            codebook,
        })
    }

    /// Standardized log-mel features, one row per encoder frame.
    pub fn features(&self, wave: &Waveform) -> Vec<Vec<f64>> {
        log_mel(wave, &self.mel, self.encoder.frames(wave.len()))
            .iter()
            .map(|f| standardize(f, &self.mean, &self.std))
            .collect()
    }

    pub fn labels(&self, wave: &Waveform) -> Vec<usize> {
        self.features(wave).iter().map(|f| self.codebook.assign(f)).collect()
    }
}

fn standardize(f: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    f.iter().zip(mean).zip(std).map(|((x, m), s)| (x - m) / s).collect()
}
