use crate::error::{Error, Result};
use crate::nn::{cosine, Graph, Tensor, Var};

/// Graph handles for the distillation objective and its two parts.
#[derive(Debug, Clone, Copy)]
pub struct DistilTerms {
    pub total: Var,
    pub l1: Var,
    pub cos: Var,
}

/// Distillation loss summed over target layers and frames:
/// `(1/D)·|h - ĥ|₁ - γ·log σ(cos(h, ĥ))` per frame.
pub fn distil_loss(g: &mut Graph, targets: &[Var], preds: &[Var], gamma: f64) -> Result<DistilTerms> {
    if targets.len() != preds.len() || targets.is_empty() {
        return Err(Error::Shape {
            op: "distil_loss",
            lhs: vec![targets.len()],
            rhs: vec![preds.len()],
        });
    }
    let mut l1_terms = Vec::new();
    let mut cos_terms = Vec::new();
    for (&h, &p) in targets.iter().zip(preds) {
        let d = g.value(h).cols() as f64;
        let diff = g.sub(h, p)?;
        let a = g.abs(diff);
        let s = g.sum(a);
        l1_terms.push(g.scale(s, 1.0 / d));
        let c = g.cosine_rows(h, p)?;
        let ls = g.log_sigmoid(c);
        let s = g.sum(ls);
        cos_terms.push(g.scale(s, -gamma));
    }
    let l1 = sum_all(g, &l1_terms)?;
    let cos = sum_all(g, &cos_terms)?;
    let total = g.add(l1, cos)?;
    Ok(DistilTerms { total, l1, cos })
}

pub(crate) fn sum_all(g: &mut Graph, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(acc)
}

/// Values of `(L_distil, L_L1, L_cos)` without building a graph.
pub fn distil_loss_value(targets: &[Tensor], preds: &[Tensor], gamma: f64) -> Result<(f64, f64, f64)> {
    if targets.len() != preds.len() {
        return Err(Error::Shape {
            op: "distil_loss",
            lhs: vec![targets.len()],
            rhs: vec![preds.len()],
        });
    }
    let (mut l1, mut cos) = (0.0, 0.0);
    for (h, p) in targets.iter().zip(preds) {
        if h.shape() != p.shape() {
            return Err(Error::Shape {
                op: "distil_loss",
                lhs: h.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        let d = h.cols() as f64;
        for t in 0..h.rows() {
            let (a, b) = (h.row_slice(t), p.row_slice(t));
            l1 += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / d;
            let c = cosine(a, b);
            cos -= gamma * (c.min(0.0) - (-c.abs()).exp().ln_1p());
        }
    }
    Ok((l1 + cos, l1, cos))
}
