use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 gradient-norm clip, disabled when `None`.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Bias-corrected Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Non-finite gradients abort before any parameter
    /// is touched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if g.len() != p.value.len() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.value.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    step: self.step + 1,
                    param: p.name.clone(),
                });
            }
        }
        let clip = match self.cfg.clip_norm {
            Some(max) => {
                let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i][j] * clip;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
