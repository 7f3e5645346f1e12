//! Linear probes on frozen, time-pooled representations.
//!
//! Features are standardized with statistics from the probe's training set
//! before the linear layer; the statistics travel with the probe.

use serde::{Deserialize, Serialize};

use crate::augmentor::DistortionLabel;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, Linear, ParamStore, Tensor};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Full-batch Adam steps.
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 300, lr: 0.02 }
    }
}

/// What the probe's outputs mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Softmax over `n` exclusive classes.
    MultiClass,
    /// Independent sigmoid per output.
    MultiLabel,
}

/// Standardization plus one linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub kind: ProbeKind,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `[dim][outputs]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Loss before the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub enum ProbeTargets<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    MultiHot(&'a [DistortionLabel]),
}

impl ProbeTargets<'_> {
    fn len(&self) -> usize {
        match self {
            ProbeTargets::Classes { labels, .. } => labels.len(),
            ProbeTargets::MultiHot(l) => l.len(),
        }
    }

    fn outputs(&self) -> usize {
        match self {
            ProbeTargets::Classes { n_classes, .. } => *n_classes,
            ProbeTargets::MultiHot(_) => DistortionLabel::N_CLASSES,
        }
    }
}

fn column_stats(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            // Constant features pass through centred but unscaled.
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn check_features(x: &[Vec<f64>]) -> Result<usize> {
    let d = x
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Eval("probe needs at least one example".into()))?;
    if d == 0 || x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Eval("probe features must be finite, non-empty and equally sized".into()));
    }
    Ok(d)
}

/// Trains a probe by full-batch Adam. Non-finite losses abort with
/// [`Error::NonFinite`].
pub fn train_probe(features: &[Vec<f64>], targets: &ProbeTargets<'_>, cfg: &ProbeConfig, seed: u64) -> Result<LinearProbe> {
    let d = check_features(features)?;
    if targets.len() != features.len() {
        return Err(Error::Eval(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    let outputs = targets.outputs();
    let (mean, std) = column_stats(features);
    let x = standardize(features, &mean, &std);
    let x = Tensor::from_rows(&x)?;

    let mut params = ParamStore::new();
    let mut rng = substream(seed, "probe-init", 0);
    let linear = Linear::new(&mut params, "probe", d, outputs, 0.1, &mut rng)?;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &params);

    let (kind, class_targets, multi_hot) = match targets {
        ProbeTargets::Classes { labels, n_classes } => {
            if labels.iter().any(|&c| c >= *n_classes) {
                return Err(Error::Eval(format!("class label out of range 0..{n_classes}")));
            }
            (ProbeKind::MultiClass, labels.iter().map(|&c| Some(c)).collect(), Vec::new())
        }
        ProbeTargets::MultiHot(labels) => (
            ProbeKind::MultiLabel,
            Vec::new(),
            labels.iter().flat_map(|l| l.as_f64()).collect::<Vec<f64>>(),
        ),
    };

    let loss_at = |params: &ParamStore| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let logits = linear.forward(&mut g, &p, xv)?;
        let loss = match kind {
            ProbeKind::MultiClass => g.cross_entropy(logits, &class_targets)?,
            ProbeKind::MultiLabel => g.bce_with_logits(logits, &multi_hot)?,
        };
        g.backward(loss)?;
        Ok((g.value(loss).item(), p.grads(&g)))
    };

    let mut initial_loss = f64::NAN;
    for step in 0..cfg.steps {
        let (loss, grads) = loss_at(&params)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: step as u64,
                param: "probe loss".into(),
            });
        }
        if step == 0 {
            initial_loss = loss;
        }
        opt.step(&mut params, &grads)?;
    }
    let (final_loss, _) = loss_at(&params)?;
    if cfg.steps == 0 {
        initial_loss = final_loss;
    }
    Ok(LinearProbe {
        kind,
        mean,
        std,
        weights: params.get(linear.w).value.to_rows(),
        bias: params.get(linear.b).value.data().to_vec(),
        initial_loss,
        final_loss,
    })
}

fn standardize(x: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect())
        .collect()
}

impl LinearProbe {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Eval(format!("probe expects {} features, got {}", self.dim(), x.len())));
        }
        let mut out = self.bias.clone();
        for (i, v) in x.iter().enumerate() {
            let z = (v - self.mean[i]) / self.std[i];
            for (o, w) in out.iter_mut().zip(&self.weights[i]) {
                *o += z * w;
            }
        }
        Ok(out)
    }

    /// Most likely class (lowest index on ties).
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let l = self.logits(x)?;
        Ok(l.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0)
    }

    /// Multi-hot prediction: every output with a positive logit.
    pub fn predict_multi_hot(&self, x: &[f64]) -> Result<DistortionLabel> {
        let l = self.logits(x)?;
        if l.len() != DistortionLabel::N_CLASSES {
            return Err(Error::Eval("probe is not a distortion probe".into()));
        }
        let mut v = [0u8; DistortionLabel::N_CLASSES];
        for (o, z) in v.iter_mut().zip(l) {
            *o = u8::from(z > 0.0);
        }
        Ok(DistortionLabel(v))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(Error::Eval("accuracy needs matching, non-empty features and labels".into()));
        }
        let mut hits = 0usize;
        for (x, &y) in features.iter().zip(labels) {
            hits += usize::from(self.predict_class(x)? == y);
        }
        Ok(hits as f64 / labels.len() as f64)
    }

    pub fn multi_label_scores(&self, features: &[Vec<f64>], labels: &[DistortionLabel]) -> Result<MultiLabelScores> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(Error::Eval("scores need matching, non-empty features and labels".into()));
        }
        let mut exact = 0usize;
        let mut per_class = [0usize; DistortionLabel::N_CLASSES];
        for (x, y) in features.iter().zip(labels) {
            let p = self.predict_multi_hot(x)?;
            exact += usize::from(p == *y);
            for (c, hit) in per_class.iter_mut().enumerate() {
                *hit += usize::from(p.0[c] == y.0[c]);
            }
        }
        let n = labels.len() as f64;
        Ok(MultiLabelScores {
            exact_match: exact as f64 / n,
            per_class: per_class.map(|h| h as f64 / n),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelScores {
    /// Fraction of examples whose whole multi-hot vector is right.
    pub exact_match: f64,
    /// Per-output accuracy, in [`DistortionLabel::NAMES`] order.
    pub per_class: [f64; DistortionLabel::N_CLASSES],
}
