//! Exact t-SNE: per-row bandwidths by bisection, symmetrized affinities,
//! and full O(N²) gradient descent with momentum, gains and early
//! exaggeration.
//!
//! Duplicate input rows make the bandwidth search ill-posed (a point cannot
//! tell its copies apart), so when any two rows coincide every coordinate
//! gets seeded Gaussian jitter of `1e-8 · (1 + max |x|)` before the search.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Allowed |row perplexity − target|.
    pub perplexity_tol: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            perplexity_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// Achieved conditional perplexity of every row.
    pub row_perplexity: Vec<f64>,
    pub initial_kl: f64,
    pub final_kl: f64,
    pub jittered: bool,
}

fn sq_dists(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional distribution of row `i` at precision `beta`; returns the
/// perplexity. Distances are shifted by the row minimum for stability.
fn row_conditional(d: &[f64], i: usize, beta: f64, p: &mut [f64]) -> f64 {
    let n = p.len();
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for j in 0..n {
        p[j] = if j == i { 0.0 } else { (-beta * (d[j] - dmin)).exp() };
        z += p[j];
    }
    let mut h = 0.0;
    for j in 0..n {
        p[j] /= z;
        if p[j] > 0.0 {
            h -= p[j] * p[j].ln();
        }
    }
    h.exp()
}

/// Bisects the precision of row `i` until its perplexity is within `tol`.
fn calibrate_row(d: &[f64], i: usize, target: f64, tol: f64, p: &mut [f64]) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mean: f64 = d.iter().sum::<f64>() / (d.len() - 1).max(1) as f64;
    if mean > 0.0 {
        beta = 1.0 / mean;
    }
    for _ in 0..500 {
        let perp = row_conditional(d, i, beta, p);
        if (perp - target).abs() < tol {
            return Ok(perp);
        }
        if perp > target {
            // Too flat: sharpen.
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
    }
    Err(Error::Eval(format!("t-SNE: row {i} cannot reach perplexity {target}")))
}

fn kl(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + sq2(y[i], y[j]));
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (1.0 / (1.0 + sq2(y[i], y[j])) / z).max(1e-300);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

fn sq2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Symmetrized joint affinities plus the achieved per-row perplexities.
pub fn affinities(x: &[Vec<f64>], perplexity: f64, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let d = sq_dists(x);
    let mut cond = vec![0.0; n * n];
    let mut perps = Vec::with_capacity(n);
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        perps.push(calibrate_row(row, i, perplexity, tol, &mut cond[i * n..(i + 1) * n])?);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    Ok((p, perps))
}

pub fn tsne(x: &[Vec<f64>], cfg: &TsneConfig, seed: u64) -> Result<TsneResult> {
    let n = x.len();
    if n < 4 {
        return Err(Error::Eval("t-SNE needs at least four points".into()));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Eval("t-SNE input must be finite and rectangular".into()));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(Error::Eval(format!(
            "perplexity {} must lie in (0, (rows-1)/3) = (0, {:.3})",
            cfg.perplexity,
            (n as f64 - 1.0) / 3.0
        )));
    }

    let mut rng = substream(seed, "tsne", 0);
    let has_duplicates = sq_dists(x)
        .iter()
        .enumerate()
        .any(|(k, &v)| v == 0.0 && k / n != k % n);
    let mut data = x.to_vec();
    if has_duplicates {
        let scale = x.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let jitter = Normal::new(0.0, 1e-8 * (1.0 + scale)).expect("positive std");
        for v in data.iter_mut().flatten() {
            *v += jitter.sample(&mut rng);
        }
    }
    let (p, row_perplexity) = affinities(&data, cfg.perplexity, cfg.perplexity_tol)?;

    let init = Normal::new(0.0, 1e-4).expect("positive std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let initial_kl = kl(&p, &y);

    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    for it in 0..cfg.iters {
        let early = it < cfg.exaggeration_iters;
        let exag = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let v = 1.0 / (1.0 + sq2(y[i], y[j]));
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exag * p[i * n + j] - w / z) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(0.01);
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let mean = [0, 1].map(|k| y.iter().map(|r| r[k]).sum::<f64>() / n as f64);
        for r in &mut y {
            r[0] -= mean[0];
            r[1] -= mean[1];
        }
    }
    let final_kl = kl(&p, &y);
    if !final_kl.is_finite() {
        return Err(Error::Eval("t-SNE produced a non-finite embedding".into()));
    }
    Ok(TsneResult {
        embedding: y,
        row_perplexity,
        initial_kl,
        final_kl,
        jittered: has_duplicates,
    })
}
