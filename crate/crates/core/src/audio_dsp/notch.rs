use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::wave::Waveform;

/// Second-order IIR section, `a0` normalized to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Audio-cookbook band-stop (notch) at `f_center` with quality
    /// `f_center / bandwidth`.
    pub fn notch(f_center: f64, bandwidth: f64, sample_rate: u32) -> Result<Self> {
        let fs = f64::from(sample_rate);
        if !(f_center > 0.0 && f_center < fs / 2.0) {
            return Err(Error::Signal(format!(
                "notch centre {f_center} Hz outside (0, {}) Hz",
                fs / 2.0
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Signal(format!("notch bandwidth {bandwidth} must be positive")));
        }
        let q = f_center / bandwidth;
        let w0 = 2.0 * PI * f_center / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        Ok(Self {
            b: [1.0 / a0, -2.0 * cos / a0, 1.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        })
    }

    /// Direct form I from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Applies one notch biquad centred at `f_center`.
pub fn band_reject(x: &Waveform, f_center: f64, bandwidth: f64) -> Result<Waveform> {
    let filt = Biquad::notch(f_center, bandwidth, x.sample_rate)?;
    Ok(Waveform {
        samples: filt.filter(&x.samples),
        sample_rate: x.sample_rate,
    })
}
