use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono discrete-time signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Signal("empty waveform".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Signal("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Snaps samples onto the signed 16-bit grid used by the WAV writer, so that
/// in-memory audio and its on-disk copy are identical.
pub fn quantize_pcm16(x: &mut [f64]) {
    for v in x {
        *v = (v.clamp(-1.0, 1.0) * 32767.0).round() / 32767.0;
    }
}
