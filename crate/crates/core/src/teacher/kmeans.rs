use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// A fitted codebook plus the inertia recorded after every assignment pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeans {
    /// Index of the nearest centroid (lowest index on ties).
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// Lloyd's algorithm from a k-means++ start. Stops early once assignments
/// stop changing. Empty clusters keep their previous centroid.
pub fn kmeans_fit(features: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means needs 1 <= K <= #frames, got K={k} with {n} frames")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim || f.iter().any(|v| !v.is_finite())) {
        return Err(Error::Config("k-means features must be finite and equally sized".into()));
    }
    let mut rng = substream(seed, "kmeans-init", 0);

    let mut centroids = vec![features[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = features[pick].clone();
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &c));
        }
        centroids.push(c);
    }

    let mut model = KMeans {
        centroids,
        inertia: Vec::new(),
    };
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (a, f) in assignment.iter_mut().zip(features) {
            let c = model.assign(f);
            inertia += sq_dist(f, &model.centroids[c]);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        model.inertia.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, f) in assignment.iter().zip(features) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        for ((c, s), &m) in model.centroids.iter_mut().zip(sums).zip(&counts) {
            if m > 0 {
                *c = s.into_iter().map(|v| v / m as f64).collect();
            }
        }
    }
    Ok(model)
}
