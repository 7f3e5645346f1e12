use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under Euclidean distance.
///
/// Labels are arbitrary class ids. Needs at least two classes with at least
/// two points each. A point whose intra- and nearest-other-class distances
/// are both zero scores 0, so a cloud of identical points scores 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Eval("silhouette: one label per point".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Eval("silhouette needs at least two classes".into()));
    }
    let index_of = |l: usize| classes.binary_search(&l).expect("label from the list");
    let mut counts = vec![0usize; classes.len()];
    for &l in labels {
        counts[index_of(l)] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Eval(format!("silhouette: class {} has a single point", classes[c])));
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; classes.len()];
    for (i, p) in points.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[index_of(labels[j])] += dist(p, q);
            }
        }
        let own = index_of(labels[i]);
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / points.len() as f64)
}
