use crate::error::{Error, Result};
use crate::nn::cosine;

/// Mean over utterances of the mean pairwise cosine similarity between an
/// utterance's representations under different conditions.
///
/// `reps[c][u]` is utterance `u` under condition `c`; every condition must
/// cover the same utterances in the same order. A zero vector has cosine 0
/// with everything.
pub fn invariance_score(reps: &[Vec<Vec<f64>>]) -> Result<f64> {
    if reps.len() < 2 {
        return Err(Error::Eval("invariance needs at least two conditions".into()));
    }
    let n = reps[0].len();
    if n == 0 || reps.iter().any(|c| c.len() != n) {
        return Err(Error::Eval("every condition must cover the same, non-empty utterance list".into()));
    }
    let c = reps.len();
    let pairs = (c * (c - 1) / 2) as f64;
    let mut total = 0.0;
    for u in 0..n {
        let mut s = 0.0;
        for a in 0..c {
            for b in a + 1..c {
                s += cosine(&reps[a][u], &reps[b][u]);
            }
        }
        total += s / pairs;
    }
    Ok((total / n as f64).clamp(-1.0, 1.0))
}
