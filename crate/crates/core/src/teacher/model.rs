use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::nn::{Binding, Checkpoint, Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, Var};
use crate::rng::substream;
use crate::wave::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub encoder: EncoderConfig,
    pub layers: usize,
    pub n_clusters: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            layers: 4,
            n_clusters: 32,
        }
    }
}

/// Masked-prediction encoder: front-end, `layers` transformer blocks, a
/// learned mask embedding and a cluster-classification head.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub mask_emb: ParamId,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

/// Graph handles produced by one teacher forward pass.
pub struct TeacherForward {
    /// Block outputs `h^1 .. h^L`, each `[T, D]`.
    pub hidden: Vec<Var>,
    /// Cluster logits `[T, K]`.
    pub logits: Var,
}

pub const TEACHER_KIND: &str = "teacher";

impl TeacherModel {
    pub fn new(config: &TeacherConfig, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.n_clusters < 2 {
            return Err(Error::Config("teacher needs >= 1 layer and >= 2 clusters".into()));
        }
        let mut rng = substream(seed, "teacher-init", 0);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config.encoder, config.layers, &mut rng)?;
        let d = config.encoder.dim;
        let mask_emb = params.add_normal("mask_emb", 1, d, 1.0, &mut rng)?;
        let final_norm = LayerNorm::new(&mut params, "final_norm", d)?;
        // Near-zero head keeps the first predictions close to uniform.
        let head = Linear::new(&mut params, "mlm_head", d, config.n_clusters, 0.01, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            params,
            encoder,
            mask_emb,
            final_norm,
            head,
        })
    }

    pub fn frames(&self, len: usize) -> usize {
        self.encoder.frames(len)
    }

    pub fn dim(&self) -> usize {
        self.config.encoder.dim
    }

    /// Builds the forward pass; `mask` replaces the flagged frames of the
    /// front-end output with the mask embedding.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Binding,
        wave: &Waveform,
        mask: Option<&[bool]>,
        mode: &mut Mode<'_>,
    ) -> Result<TeacherForward> {
        let mut x = self.encoder.features(g, p, wave, mode)?;
        if let Some(m) = mask {
            x = g.mask_rows(x, p.var(self.mask_emb), m)?;
        }
        let hidden = self.encoder.transform(g, p, x, mode)?;
        let last = *hidden.last().expect("at least one layer");
        let h = self.final_norm.forward(g, p, last)?;
        let logits = self.head.forward(g, p, h)?;
        Ok(TeacherForward { hidden, logits })
    }

    /// Per-layer hidden sequences `h^1 .. h^L` in evaluation mode.
    pub fn hidden(&self, wave: &Waveform) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = self.encoder.features(&mut g, &p, wave, &mut Mode::Eval)?;
        let hidden = self.encoder.transform(&mut g, &p, x, &mut Mode::Eval)?;
        Ok(hidden.into_iter().map(|v| g.value(v).clone()).collect())
    }

    pub fn to_checkpoint(&self, config_fingerprint: &str, seed: u64) -> Checkpoint {
        let meta = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::from_store(TEACHER_KIND, config_fingerprint, seed, meta, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(TEACHER_KIND)?;
        let config: TeacherConfig = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("teacher config: {e}")))?;
        let mut model = Self::new(&config, 0)?;
        let stored = ck.to_store()?;
        if stored.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "teacher expects {} arrays, checkpoint has {}",
                model.params.len(),
                stored.len()
            )));
        }
        let copied = model.params.copy_matching(&stored, |n| Some(n.to_string()))?;
        if copied != model.params.len() {
            return Err(Error::Checkpoint("teacher checkpoint has unexpected parameter names".into()));
        }
        Ok(model)
    }
}

/// Teacher hidden states for `wave`; a pure function of (weights, wave).
pub fn teacher_hidden(teacher: &TeacherModel, wave: &Waveform) -> Result<Vec<Tensor>> {
    teacher.hidden(wave)
}
