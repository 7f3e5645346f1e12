use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augmentor::Condition;
use crate::error::{Error, Result};

/// Split-averaged embeddings: one row per (condition, split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub rows: Vec<Vec<f64>>,
    pub split: Vec<usize>,
    pub condition: Vec<Condition>,
    pub n_splits: usize,
}

/// Contiguous near-equal chunks: split `s` holds positions
/// `s*n/k .. (s+1)*n/k`.
pub fn split_bounds(n: usize, n_splits: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_splits).map(|s| s * n / n_splits..(s + 1) * n / n_splits).collect()
}

/// Sorts each condition's utterances by id, cuts them into `n_splits`
/// contiguous groups and averages each group. Every condition must carry the
/// same id set, so a split holds the same utterances under every condition.
pub fn split_average_embeddings(
    per_condition: &[(Condition, Vec<(String, Vec<f64>)>)],
    n_splits: usize,
) -> Result<EmbeddingMatrix> {
    if n_splits == 0 {
        return Err(Error::Eval("need at least one split".into()));
    }
    let mut reference: Option<Vec<&str>> = None;
    let mut out = EmbeddingMatrix {
        rows: Vec::with_capacity(per_condition.len() * n_splits),
        split: Vec::new(),
        condition: Vec::new(),
        n_splits,
    };
    for (condition, items) in per_condition {
        if items.len() < n_splits {
            return Err(Error::Eval(format!(
                "{} utterances cannot fill {n_splits} splits",
                items.len()
            )));
        }
        let mut sorted: Vec<&(String, Vec<f64>)> = items.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let ids: Vec<&str> = sorted.iter().map(|i| i.0.as_str()).collect();
        match &reference {
            None => reference = Some(ids),
            Some(r) if *r != ids => {
                return Err(Error::Eval(format!("condition {condition} covers a different utterance set")));
            }
            Some(_) => {}
        }
        let dim = sorted[0].1.len();
        for (s, range) in split_bounds(sorted.len(), n_splits).into_iter().enumerate() {
            let mut mean = vec![0.0; dim];
            for item in &sorted[range.clone()] {
                if item.1.len() != dim {
                    return Err(Error::Eval("representations differ in length".into()));
                }
                for (m, v) in mean.iter_mut().zip(&item.1) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= range.len() as f64;
            }
            out.rows.push(mean);
            out.split.push(s);
            out.condition.push(*condition);
        }
    }
    Ok(out)
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Condition index of every row, in order of first appearance.
    pub fn condition_ids(&self) -> Vec<usize> {
        let mut seen: Vec<Condition> = Vec::new();
        self.condition
            .iter()
            .map(|c| match seen.iter().position(|s| s == c) {
                Some(i) => i,
                None => {
                    seen.push(*c);
                    seen.len() - 1
                }
            })
            .collect()
    }

    /// `split,condition,d0,d1,...`
    pub fn to_csv(&self) -> String {
        metadata_csv(&self.split, &self.condition, &self.rows, "d")
    }
}

/// CSV with `split,condition` metadata followed by `<prefix>0..` columns.
pub fn metadata_csv(split: &[usize], condition: &[Condition], rows: &[Vec<f64>], prefix: &str) -> String {
    let dim = rows.first().map_or(0, Vec::len);
    let mut s = String::from("split,condition");
    for j in 0..dim {
        let _ = write!(s, ",{prefix}{j}");
    }
    s.push('\n');
    for ((sp, c), r) in split.iter().zip(condition).zip(rows) {
        let _ = write!(s, "{sp},{c}");
        for v in r {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}
