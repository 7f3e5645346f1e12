//! Synthetic noise banks. Three are used for training-time augmentation;
//! `fsd_like` and `dns_like` are held out for evaluation only.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::CorpusConfig;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng as StreamRng};
use crate::wave::{power, quantize_pcm16, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankName {
    MusanLike,
    WhamLike,
    Gaussian,
    FsdLike,
    DnsLike,
}

impl BankName {
    pub const ALL: [BankName; 5] = [
        BankName::MusanLike,
        BankName::WhamLike,
        BankName::Gaussian,
        BankName::FsdLike,
        BankName::DnsLike,
    ];
    pub const IN_DOMAIN: [BankName; 3] = [BankName::MusanLike, BankName::Gaussian, BankName::WhamLike];

    pub fn is_heldout(self) -> bool {
        matches!(self, BankName::FsdLike | BankName::DnsLike)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BankName::MusanLike => "musan_like",
            BankName::WhamLike => "wham_like",
            BankName::Gaussian => "gaussian",
            BankName::FsdLike => "fsd_like",
            BankName::DnsLike => "dns_like",
        }
    }
}

impl fmt::Display for BankName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A noise clip tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub bank: BankName,
    pub index: usize,
    pub wave: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub name: BankName,
    pub heldout: bool,
    pub clips: Vec<NoiseClip>,
}

/// All five banks.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBanks {
    banks: Vec<NoiseBank>,
}

/// The in-domain subset visible to training-time augmentation.
#[derive(Debug, Clone, Copy)]
pub struct TrainingBanks<'a> {
    banks: &'a NoiseBanks,
}

impl NoiseBanks {
    pub fn new(banks: Vec<NoiseBank>) -> Result<Self> {
        for name in BankName::ALL {
            let n = banks.iter().filter(|b| b.name == name).count();
            if n != 1 {
                return Err(Error::Config(format!("expected exactly one `{name}` bank, found {n}")));
            }
        }
        for b in &banks {
            if b.heldout != b.name.is_heldout() {
                return Err(Error::Config(format!("bank `{}` has wrong held-out flag", b.name)));
            }
            if b.clips.is_empty() || b.clips.iter().any(|c| c.wave.power() <= 0.0) {
                return Err(Error::Config(format!("bank `{}` has an empty or silent clip", b.name)));
            }
        }
        Ok(Self { banks })
    }

    pub fn get(&self, name: BankName) -> &NoiseBank {
        self.banks
            .iter()
            .find(|b| b.name == name)
            .expect("constructor guarantees all banks")
    }

    pub fn iter(&self) -> impl Iterator<Item = &NoiseBank> {
        self.banks.iter()
    }

    pub fn training(&self) -> TrainingBanks<'_> {
        TrainingBanks { banks: self }
    }
}

impl<'a> TrainingBanks<'a> {
    /// Returns the bank, refusing held-out ones.
    pub fn get(&self, name: BankName) -> Result<&'a NoiseBank> {
        if name.is_heldout() {
            return Err(Error::PolicyViolation(format!(
                "held-out bank `{name}` requested on the training path"
            )));
        }
        Ok(self.banks.get(name))
    }
}

fn white<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Shapes white noise so its power spectrum follows `shape(freq_hz)`.
fn spectral_shape<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = white(n, rng).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = (bin as f64 * fs / n as f64).max(fs / n as f64);
        *c *= shape(f).sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn normalize(x: &mut [f64], rms: f64) {
    let p = power(x).sqrt().max(1e-12);
    for v in x.iter_mut() {
        *v *= rms / p;
    }
}

fn colored<R: Rng + ?Sized>(n: usize, fs: f64, exponent: f64, rng: &mut R) -> Vec<f64> {
    let mut x = spectral_shape(n, fs, rng, |f| f.powf(-exponent));
    normalize(&mut x, 1.0);
    x
}

fn musan_like<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    // Pink background plus band-limited tone bursts.
    let mut x = colored(n, fs, 1.0 + rng.random_range(-0.1..0.1), rng);
    let bursts = (n as f64 / fs * rng.random_range(4.0..7.0)) as usize;
    for _ in 0..bursts {
        let freq = rng.random_range(300.0..0.4 * fs);
        let len = (rng.random_range(0.05..0.2) * fs) as usize;
        let start = rng.random_range(0..n.saturating_sub(len).max(1));
        let amp = rng.random_range(1.0..2.5);
        for i in 0..len.min(n - start) {
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos();
            x[start + i] += amp * env * (2.0 * PI * freq * i as f64 / fs).sin();
        }
    }
    x
}

fn wham_like<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    // Brown noise under a few overlapping slow envelopes.
    let base = colored(n, fs, 2.0 + rng.random_range(-0.15..0.15), rng);
    let mods: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(2.0..6.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    base.iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64 / fs;
            let env: f64 = mods.iter().map(|(fm, ph)| 1.0 + 0.8 * (2.0 * PI * fm * t + ph).sin()).sum::<f64>() / 3.0;
            v * env
        })
        .collect()
}

fn fsd_like<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    // Impulsive event train over blue noise.
    let mut x = colored(n, fs, -1.0 + rng.random_range(-0.1..0.1), rng);
    for v in x.iter_mut() {
        *v *= 0.3;
    }
    let rate = rng.random_range(6.0..10.0);
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / rate;
        let start = (t * fs) as usize;
        if start >= n {
            break;
        }
        let decay = rng.random_range(0.005..0.02) * fs;
        let amp = rng.random_range(2.0..6.0);
        // Each event is a damped high resonance (a knock or clatter).
        let f_event = rng.random_range(1500.0..3500.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let len = ((decay * 6.0) as usize).min(n - start);
        for i in 0..len {
            let ph = 2.0 * PI * f_event * i as f64 / fs + phase;
            x[start + i] += amp * (-(i as f64) / decay).exp() * ph.sin();
        }
    }
    x
}

fn dns_like<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    // Mains hum with harmonics over mid-band noise that drifts slowly.
    let centre = rng.random_range(600.0..1000.0f64).ln();
    let mut x = spectral_shape(n, fs, rng, |f| {
        let d = (f.ln() - centre) / 0.5;
        (-0.5 * d * d).exp() + 1e-4
    });
    normalize(&mut x, 1.0);
    let hum = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
    let phases: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let drift = rng.random_range(0.3..0.8);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let h: f64 = phases
            .iter()
            .enumerate()
            .map(|(k, ph)| (2.0 * PI * hum * (k + 1) as f64 * t + ph).sin() / (k + 1) as f64)
            .sum();
        *v = *v * (1.0 + 0.5 * (2.0 * PI * drift * t).sin()) + 0.8 * h;
    }
    x
}

fn generate_clip(name: BankName, n: usize, fs: f64, rng: &mut StreamRng) -> Vec<f64> {
    let mut x = match name {
        BankName::MusanLike => musan_like(n, fs, rng),
        BankName::WhamLike => wham_like(n, fs, rng),
        BankName::Gaussian => white(n, rng),
        BankName::FsdLike => fsd_like(n, fs, rng),
        BankName::DnsLike => dns_like(n, fs, rng),
    };
    // Peak at 0.9 so the PCM16 copy on disk is unclipped.
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for v in x.iter_mut() {
        *v *= 0.9 / peak;
    }
    quantize_pcm16(&mut x);
    x
}

/// Generates the five noise banks. Pure in `(cfg, seed)`.
pub fn generate_noise_banks(cfg: &CorpusConfig, seed: u64) -> Result<NoiseBanks> {
    cfg.validate()?;
    let fs = f64::from(cfg.sample_rate);
    let n = (cfg.noise_clip_secs * fs).round() as usize;
    let banks = BankName::ALL
        .iter()
        .map(|&name| NoiseBank {
            name,
            heldout: name.is_heldout(),
            clips: (0..cfg.noise_clips_per_bank)
                .map(|i| {
                    let mut rng = substream(seed, &format!("noise-{name}"), i as u64);
                    NoiseClip {
                        bank: name,
                        index: i,
                        wave: Waveform {
                            samples: generate_clip(name, n, fs, &mut rng),
                            sample_rate: cfg.sample_rate,
                        },
                    }
                })
                .collect(),
        })
        .collect();
    NoiseBanks::new(banks)
}
