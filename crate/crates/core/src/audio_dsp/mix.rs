use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::wave::{power, Waveform};

/// Picks where to start reading `noise_len` samples of noise for a signal of
/// `speech_len` samples. Longer noise is randomly cropped; shorter noise is
/// tiled from a random phase.
pub fn pick_crop_offset<R: Rng + ?Sized>(noise_len: usize, speech_len: usize, rng: &mut R) -> usize {
    if noise_len > speech_len {
        rng.random_range(0..=noise_len - speech_len)
    } else {
        rng.random_range(0..noise_len)
    }
}

/// Mixes `noise` into `speech` so that the added component sits exactly
/// `snr_db` below the speech power. The noise is read cyclically from
/// `offset`.
pub fn mix_at_snr_with_offset(
    speech: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Waveform> {
    if speech.is_empty() {
        return Err(Error::Signal("cannot mix into empty speech".into()));
    }
    if noise.is_empty() {
        return Err(Error::Signal("noise clip is empty".into()));
    }
    if speech.sample_rate != noise.sample_rate {
        return Err(Error::Signal(format!(
            "sample rate mismatch: speech {} Hz, noise {} Hz",
            speech.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Signal(format!("invalid snr {snr_db}")));
    }
    let n = speech.len();
    let segment: Vec<f64> = (0..n)
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let noise_power = power(&segment);
    if noise_power <= 0.0 {
        return Err(Error::Signal("noise segment has zero power".into()));
    }
    let gain = (speech.power() / noise_power).sqrt() * 10f64.powf(-snr_db / 20.0);
    let samples = speech
        .samples
        .iter()
        .zip(&segment)
        .map(|(s, v)| s + gain * v)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: speech.sample_rate,
    })
}

/// [`mix_at_snr_with_offset`] with the crop offset drawn from `rng`.
/// Returns the mixture and the offset used.
pub fn mix_at_snr<R: Rng + ?Sized>(
    speech: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<(Waveform, usize)> {
    if noise.is_empty() {
        return Err(Error::Signal("noise clip is empty".into()));
    }
    let offset = pick_crop_offset(noise.len(), speech.len(), rng);
    mix_at_snr_with_offset(speech, noise, snr_db, offset).map(|w| (w, offset))
}

/// `10 log10(P_signal / P_noise)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// White Gaussian noise with the given standard deviation.
pub fn gaussian_noise<R: Rng + ?Sized>(
    length: usize,
    std: f64,
    sample_rate: u32,
    rng: &mut R,
) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::Signal("noise length must be positive".into()));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Signal(format!("invalid noise std {std}")));
    }
    if std == 0.0 {
        return Ok(Waveform {
            samples: vec![0.0; length],
            sample_rate,
        });
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Signal(e.to_string()))?;
    Ok(Waveform {
        samples: (0..length).map(|_| normal.sample(rng)).collect(),
        sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform {
            samples,
            sample_rate: 8000,
        }
    }

    #[test]
    fn equal_rms_at_zero_db_uses_unit_gain() {
        let s = wave(vec![1.0, -1.0, 1.0, -1.0]);
        let n = wave(vec![-1.0, -1.0, 1.0, 1.0]);
        let out = mix_at_snr_with_offset(&s, &n, 0.0, 0).unwrap();
        assert_eq!(out.samples, vec![0.0, -2.0, 2.0, 0.0]);
    }

    #[test]
    fn ten_db_is_measured_back() {
        let mut rng = substream(1, "t", 0);
        let s = gaussian_noise(4000, 0.3, 8000, &mut rng).unwrap();
        let n = gaussian_noise(9000, 1.7, 8000, &mut rng).unwrap();
        let (out, _) = mix_at_snr(&s, &n, 10.0, &mut rng).unwrap();
        let added: Vec<f64> = out.samples.iter().zip(&s.samples).map(|(o, s)| o - s).collect();
        assert!((snr_db(&s.samples, &added) - 10.0).abs() < 0.01);
    }

    #[test]
    fn silent_noise_is_rejected() {
        let s = wave(vec![0.5; 10]);
        let n = wave(vec![0.0; 10]);
        assert!(mix_at_snr_with_offset(&s, &n, 10.0, 0).is_err());
        let empty = Waveform {
            samples: vec![],
            sample_rate: 8000,
        };
        assert!(mix_at_snr_with_offset(&empty, &s, 10.0, 0).is_err());
    }

    #[test]
    fn short_noise_is_tiled() {
        let s = wave(vec![1.0; 5]);
        let n = wave(vec![1.0, 2.0]);
        let out = mix_at_snr_with_offset(&s, &n, 0.0, 1).unwrap();
        // segment = [2,1,2,1,2]
        let g = (1.0f64 / ((4.0 * 3.0 + 2.0) / 5.0)).sqrt();
        assert!((out.samples[0] - (1.0 + 2.0 * g)).abs() < 1e-12);
        assert!((out.samples[1] - (1.0 + g)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_noise_statistics() {
        let mut rng = substream(3, "g", 0);
        let z = gaussian_noise(16, 0.0, 8000, &mut rng).unwrap();
        assert!(z.samples.iter().all(|&v| v == 0.0));

        let x = gaussian_noise(100_000, 1.0, 8000, &mut rng).unwrap();
        let mean = x.samples.iter().sum::<f64>() / x.len() as f64;
        let var = x.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((0.99..=1.01).contains(&var.sqrt()), "std {}", var.sqrt());

        let a = gaussian_noise(64, 1.0, 8000, &mut substream(9, "g", 0)).unwrap();
        let b = gaussian_noise(64, 1.0, 8000, &mut substream(9, "g", 0)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn achieved_snr_matches_request(seed in any::<u64>(), snr in -5.0f64..40.0, len in 16usize..600, nlen in 8usize..900) {
            let mut rng = substream(seed, "prop", 0);
            let s = gaussian_noise(len, 0.5, 8000, &mut rng).unwrap();
            let n = gaussian_noise(nlen, 2.0, 8000, &mut rng).unwrap();
            let (out, _) = mix_at_snr(&s, &n, snr, &mut rng).unwrap();
            prop_assert_eq!(out.len(), s.len());
            let added: Vec<f64> = out.samples.iter().zip(&s.samples).map(|(o, s)| o - s).collect();
            prop_assert!((snr_db(&s.samples, &added) - snr).abs() <= 0.01);
        }
    }
}
