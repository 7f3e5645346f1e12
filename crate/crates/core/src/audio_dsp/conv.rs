use crate::error::{Error, Result};
use crate::wave::Waveform;

use super::Rir;

/// Linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn convolve_trunc_taps(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 || k >= x.len() {
            continue;
        }
        for (yi, xi) in y[k..].iter_mut().zip(x) {
            *yi += hk * xi;
        }
    }
    y
}

pub fn convolve_trunc(x: &Waveform, h: &Rir) -> Result<Waveform> {
    if x.sample_rate != h.sample_rate {
        return Err(Error::Signal(format!(
            "sample rate mismatch: signal {} Hz, impulse response {} Hz",
            x.sample_rate, h.sample_rate
        )));
    }
    Ok(Waveform {
        samples: convolve_trunc_taps(&x.samples, &h.taps),
        sample_rate: x.sample_rate,
    })
}
