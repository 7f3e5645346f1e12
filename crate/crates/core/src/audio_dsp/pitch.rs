//! Length-preserving pitch shift: linear-interpolation resampling followed by
//! a waveform-similarity overlap-add time stretch back to the input length.

use std::f64::consts::PI;

use crate::wave::Waveform;

const WINDOW_SECS: f64 = 0.025;

fn resample_linear(x: &[f64], ratio: f64) -> Vec<f64> {
    let last = (x.len() - 1) as f64;
    let n = (last / ratio).floor() as usize + 1;
    (0..n)
        .map(|m| {
            let pos = m as f64 * ratio;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < x.len() {
                x[i] * (1.0 - frac) + x[i + 1] * frac
            } else {
                x[x.len() - 1]
            }
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Time-stretches `y` to exactly `out_len` samples, keeping its pitch.
fn wsola(y: &[f64], out_len: usize, win: usize) -> Vec<f64> {
    let hop = (win / 2).max(1);
    let tolerance = hop / 2;
    let window = hann(win);
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < y.len() {
            y[i as usize]
        } else {
            0.0
        }
    };
    let analysis_hop = hop as f64 * y.len() as f64 / out_len as f64;

    let mut out = vec![0.0; out_len + win];
    let mut norm = vec![0.0; out_len + win];
    let mut prev: isize = 0;
    let frames = out_len.div_ceil(hop) + 1;
    for k in 0..frames {
        let nominal = (k as f64 * analysis_hop).round() as isize;
        let start = if k == 0 {
            0
        } else {
            // Best match to the natural continuation of the previous segment
            // over the overlapping half window.
            let natural = prev + hop as isize;
            let mut best = nominal;
            let mut best_score = f64::NEG_INFINITY;
            for delta in -(tolerance as isize)..=(tolerance as isize) {
                let cand = nominal + delta;
                let score: f64 = (0..win - hop)
                    .map(|j| at(cand + j as isize) * at(natural + j as isize))
                    .sum();
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
            best
        };
        let base = k * hop;
        for j in 0..win {
            if base + j >= out.len() {
                break;
            }
            out[base + j] += window[j] * at(start + j as isize);
            norm[base + j] += window[j];
        }
        prev = start;
    }
    out.truncate(out_len);
    for (o, w) in out.iter_mut().zip(&norm) {
        if *w > 1e-8 {
            *o /= w;
        }
    }
    out
}

/// Shifts pitch by `cents` (±1200 supported) without changing duration.
pub fn pitch_shift(x: &Waveform, cents: f64) -> Waveform {
    if cents == 0.0 || x.len() < 2 {
        return x.clone();
    }
    let ratio = 2f64.powf(cents / 1200.0);
    let resampled = resample_linear(&x.samples, ratio);
    let win = ((WINDOW_SECS * f64::from(x.sample_rate)).round() as usize).max(4);
    Waveform {
        samples: wsola(&resampled, x.len(), win),
        sample_rate: x.sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, n: usize, fs: u32) -> Waveform {
        Waveform {
            samples: (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / f64::from(fs)).sin())
                .collect(),
            sample_rate: fs,
        }
    }

    fn peak_hz(x: &Waveform) -> f64 {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x
            .samples
            .iter()
            .zip(hann(n))
            .map(|(v, w)| Complex::new(v * w, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (bin, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.norm()))
            .fold((0, 0.0), |acc, (i, m)| if m > acc.1 { (i, m) } else { acc });
        bin as f64 * f64::from(x.sample_rate) / n as f64
    }

    #[test]
    fn zero_cents_is_identity() {
        let x = sine(300.0, 1234, 8000);
        assert_eq!(pitch_shift(&x, 0.0), x);
    }

    #[test]
    fn octave_up_moves_440_to_880() {
        let x = sine(440.0, 16000, 16000);
        let y = pitch_shift(&x, 1200.0);
        assert_eq!(y.len(), x.len());
        let peak = peak_hz(&y);
        assert!((peak - 880.0).abs() <= 0.03 * 880.0, "peak at {peak} Hz");
    }

    #[test]
    fn length_is_preserved() {
        for (n, cents) in [(4000, 300.0), (4001, -300.0), (57, 1200.0), (999, -1200.0), (2, 50.0)] {
            let x = sine(200.0, n, 8000);
            assert_eq!(pitch_shift(&x, cents).len(), n);
        }
    }

    #[test]
    fn deterministic() {
        let x = sine(250.0, 3000, 8000);
        assert_eq!(pitch_shift(&x, 170.0), pitch_shift(&x, 170.0));
    }
}
