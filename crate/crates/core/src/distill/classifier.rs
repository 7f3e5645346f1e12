use crate::augmentor::DistortionLabel;
use crate::error::{Error, Result};
use crate::nn::{Binding, Checkpoint, Graph, Linear, ParamStore, Var};
use crate::rng::substream;

/// Mean pooling over time followed by one linear layer onto the seven
/// distortion classes.
#[derive(Debug, Clone)]
pub struct DistortionClassifier {
    pub params: ParamStore,
    pub linear: Linear,
}

pub const CLASSIFIER_KIND: &str = "distortion-classifier";

impl DistortionClassifier {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "classifier-init", 0);
        let mut params = ParamStore::new();
        let linear = Linear::new(&mut params, "classifier", dim, DistortionLabel::N_CLASSES, 1.0, &mut rng)?;
        Ok(Self { params, linear })
    }

    /// `[T, D]` hidden states to `[1, 7]` logits.
    pub fn forward(&self, g: &mut Graph, p: &Binding, z: Var) -> Result<Var> {
        let pooled = g.mean_rows(z);
        self.linear.forward(g, p, pooled)
    }

    /// Mean multi-label BCE of the classifier over a batch.
    pub fn loss(&self, g: &mut Graph, p: &Binding, zs: &[Var], labels: &[DistortionLabel]) -> Result<Var> {
        if zs.len() != labels.len() || zs.is_empty() {
            return Err(Error::Shape {
                op: "classifier_loss",
                lhs: vec![zs.len()],
                rhs: vec![labels.len()],
            });
        }
        let mut terms = Vec::with_capacity(zs.len());
        for (&z, label) in zs.iter().zip(labels) {
            let logits = self.forward(g, p, z)?;
            terms.push(g.bce_with_logits(logits, &label.as_f64())?);
        }
        let sum = super::loss::sum_all(g, &terms)?;
        Ok(g.scale(sum, 1.0 / zs.len() as f64))
    }

    pub fn to_checkpoint(&self, config_fingerprint: &str, seed: u64) -> Checkpoint {
        Checkpoint::from_store(
            CLASSIFIER_KIND,
            config_fingerprint,
            seed,
            serde_json::json!({ "dim": self.linear.input }),
            &self.params,
        )
    }
}
