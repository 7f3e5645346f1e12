use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::wave::Waveform;

/// Log-mel analysis settings. Frame `t` is centred at `hop * t + centre`,
/// which lines it up with the encoder's strided front-end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub centre: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 20,
            n_fft: 256,
            hop: 64,
            centre: 34,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let fs = f64::from(sample_rate);
    let top = hz_to_mel(fs / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * fs / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-mel energies for `n_frames` frames (`n_frames x n_mels`).
pub fn log_mel(wave: &Waveform, cfg: &MelConfig, n_frames: usize) -> Vec<Vec<f64>> {
    let bank = mel_filterbank(cfg.n_mels, cfg.n_fft, wave.sample_rate);
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.n_fft as f64).cos())
        .collect();
    let half = (cfg.n_fft / 2) as isize;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    (0..n_frames)
        .map(|t| {
            let start = (t * cfg.hop + cfg.centre) as isize - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let v = if idx >= 0 && (idx as usize) < wave.len() {
                    wave.samples[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex::new(v * window[i], 0.0);
            }
            fft.process(&mut buf);
            let spec: Vec<f64> = buf[..cfg.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
            bank.iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(&spec).map(|(w, p)| w * p).sum();
                    (e + 1e-10).ln()
                })
                .collect()
        })
        .collect()
}
