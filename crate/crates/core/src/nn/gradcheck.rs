//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of [`gradcheck`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Absolute floor on the relative-error denominator, so entries whose true
/// gradient is zero are judged on their absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// Compares reverse-mode gradients of `build` with central differences of
/// step `h` for every scalar of every input.
///
/// The relative error of one entry is
/// `|analytic - numeric| / max(|analytic| + |numeric|, REL_ERR_FLOOR)`.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();

    let mut work = inputs.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x0 = input.data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_ERR_FLOOR);
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err,
        checked,
    })
}
