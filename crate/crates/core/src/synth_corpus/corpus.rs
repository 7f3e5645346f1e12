use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::wave::{quantize_pcm16, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_classes: usize,
    /// Phone symbols owned by each class.
    pub phones_per_class: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub sample_rate: u32,
    pub min_duration: f64,
    pub max_duration: f64,
    pub noise_clips_per_bank: usize,
    pub noise_clip_secs: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            phones_per_class: 4,
            train: 320,
            dev: 48,
            test: 800,
            sample_rate: 8000,
            min_duration: 0.5,
            max_duration: 1.0,
            noise_clips_per_bank: 8,
            noise_clip_secs: 2.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.phones_per_class == 0 {
            return Err(Error::Config("phones_per_class must be positive".into()));
        }
        if !(self.min_duration > 0.0 && self.max_duration >= self.min_duration) {
            return Err(Error::Config(format!(
                "empty duration range [{}, {}]",
                self.min_duration, self.max_duration
            )));
        }
        if ![4000, 8000, 16000].contains(&self.sample_rate) {
            return Err(Error::Config(format!(
                "sample rate {} not in {{4000, 8000, 16000}}",
                self.sample_rate
            )));
        }
        if self.noise_clips_per_bank == 0 || !(self.noise_clip_secs > 0.0) {
            return Err(Error::Config("noise banks need at least one non-empty clip".into()));
        }
        Ok(())
    }

    pub fn n_phones(&self) -> usize {
        self.n_classes * self.phones_per_class
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// Acoustic recipe of one phone symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phone {
    pub f0: f64,
    pub formants: [f64; 2],
    pub bandwidths: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
    pub class_label: usize,
    pub split: Split,
    pub phones: Vec<usize>,
}

/// The phone inventory for a corpus seed.
pub fn phone_table(cfg: &CorpusConfig, seed: u64) -> Vec<Phone> {
    let mut rng = substream(seed, "phones", 0);
    let nyq = 0.45 * f64::from(cfg.sample_rate);
    (0..cfg.n_phones())
        .map(|_| Phone {
            f0: rng.random_range(100.0..240.0),
            formants: [
                rng.random_range(300.0..900.0f64).min(nyq * 0.5),
                rng.random_range(1000.0..3000.0f64).min(nyq * 0.9),
            ],
            bandwidths: [rng.random_range(60.0..140.0), rng.random_range(90.0..200.0)],
        })
        .collect()
}

/// Class of a phone sequence: every phone belongs to exactly one class group.
pub fn class_of(phones: &[usize], phones_per_class: usize) -> usize {
    phones[0] / phones_per_class
}

pub fn utterance_id(split: Split, index: usize) -> String {
    format!("{}-{index:05}", split.as_str())
}

fn formant_gain(phone: &Phone, f: f64) -> f64 {
    let mut g = 0.02;
    for k in 0..2 {
        let x = (f - phone.formants[k]) / phone.bandwidths[k];
        g += 1.0 / (1.0 + x * x);
    }
    g
}

fn synth_segment<R: Rng + ?Sized>(phone: &Phone, len: usize, fs: f64, rng: &mut R, out: &mut Vec<f64>) {
    let f0 = phone.f0 * (1.0 + rng.random_range(-0.03..0.03));
    let nyq = 0.45 * fs;
    let ramp = ((0.008 * fs) as usize).min(len / 2).max(1);
    let mut harmonics = Vec::new();
    let mut h = 1.0;
    while h * f0 < nyq {
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        harmonics.push((2.0 * PI * h * f0 / fs, formant_gain(phone, h * f0), phase));
        h += 1.0;
    }
    for n in 0..len {
        let env = if n < ramp {
            0.5 - 0.5 * (PI * n as f64 / ramp as f64).cos()
        } else if n >= len - ramp {
            0.5 - 0.5 * (PI * (len - n) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        let s: f64 = harmonics
            .iter()
            .map(|&(w, a, p)| a * (w * n as f64 + p).sin())
            .sum();
        out.push(env * s);
    }
}

/// Generates utterance `index` of `split`. Pure in `(cfg, seed, split, index)`.
pub fn generate_utterance(
    cfg: &CorpusConfig,
    table: &[Phone],
    seed: u64,
    split: Split,
    index: usize,
) -> Utterance {
    let mut rng = substream(seed, &format!("utt-{}", split.as_str()), index as u64);
    let fs = f64::from(cfg.sample_rate);
    let class = index % cfg.n_classes;
    let n_segments = rng.random_range(2..=5usize);
    let phones: Vec<usize> = (0..n_segments)
        .map(|_| class * cfg.phones_per_class + rng.random_range(0..cfg.phones_per_class))
        .collect();
    let min_len = (cfg.min_duration * fs).round() as usize;
    let max_len = (cfg.max_duration * fs).round() as usize;
    let total = rng.random_range(min_len..=max_len);

    let weights: Vec<f64> = (0..n_segments).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut bounds = vec![0usize];
    let mut acc = 0.0;
    for w in &weights[..n_segments - 1] {
        acc += w / wsum;
        bounds.push((acc * total as f64).round() as usize);
    }
    bounds.push(total);

    let mut samples = Vec::with_capacity(total);
    for (k, &p) in phones.iter().enumerate() {
        synth_segment(&table[p], bounds[k + 1] - bounds[k], fs, &mut rng, &mut samples);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let level = rng.random_range(0.5..0.9) / peak;
    for s in &mut samples {
        *s *= level;
    }
    quantize_pcm16(&mut samples);

    Utterance {
        id: utterance_id(split, index),
        wave: Waveform {
            samples,
            sample_rate: cfg.sample_rate,
        },
        class_label: class_of(&phones, cfg.phones_per_class),
        split,
        phones,
    }
}

/// All utterances of every split, in split then index order.
pub fn generate_utterances(cfg: &CorpusConfig, seed: u64) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let table = phone_table(cfg, seed);
    Ok(Split::ALL
        .iter()
        .flat_map(|&split| (0..cfg.count(split)).map(move |i| (split, i)))
        .map(|(split, i)| generate_utterance(cfg, &table, seed, split, i))
        .collect())
}
