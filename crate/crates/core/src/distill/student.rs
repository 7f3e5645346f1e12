use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Binding, Checkpoint, Graph, Linear, ParamStore, Tensor, Var};
use crate::rng::substream;
use crate::teacher::{Encoder, EncoderConfig, Mode, TeacherModel};
use crate::wave::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentConfig {
    pub encoder: EncoderConfig,
    pub layers: usize,
    /// 1-based teacher layers the prediction heads regress.
    pub target_layers: Vec<usize>,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            layers: 2,
            target_layers: vec![2, 3, 4],
        }
    }
}

/// Truncated copy of the teacher encoder with one linear prediction head
/// per target layer.
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub heads: Vec<Linear>,
}

pub struct StudentForward {
    /// Last hidden states `[T, D]`.
    pub z: Var,
    /// One prediction `[T, D]` per target layer.
    pub preds: Vec<Var>,
}

pub const STUDENT_KIND: &str = "student";

impl StudentModel {
    /// Fresh student; every parameter drawn from `seed`.
    pub fn new(config: &StudentConfig, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.target_layers.is_empty() {
            return Err(Error::Config("student needs >= 1 layer and >= 1 target layer".into()));
        }
        let mut rng = substream(seed, "student-init", 0);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config.encoder, config.layers, &mut rng)?;
        let d = config.encoder.dim;
        let mut head_rng = substream(seed, "student-heads", 0);
        let heads = (0..config.target_layers.len())
            .map(|i| Linear::new(&mut params, &format!("heads.{i}"), d, d, 1.0, &mut head_rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            params,
            encoder,
            heads,
        })
    }

    pub fn frames(&self, len: usize) -> usize {
        self.encoder.frames(len)
    }

    pub fn head_param_count(&self) -> usize {
        self.heads.iter().map(Linear::num_params).sum()
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, wave: &Waveform, mode: &mut Mode<'_>) -> Result<StudentForward> {
        let x = self.encoder.features(g, p, wave, mode)?;
        let hidden = self.encoder.transform(g, p, x, mode)?;
        let z = *hidden.last().expect("at least one layer");
        let preds = self
            .heads
            .iter()
            .map(|h| h.forward(g, p, z))
            .collect::<Result<_>>()?;
        Ok(StudentForward { z, preds })
    }

    /// Last hidden states in evaluation mode.
    pub fn represent(&self, wave: &Waveform) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = self.encoder.features(&mut g, &p, wave, &mut Mode::Eval)?;
        let hidden = self.encoder.transform(&mut g, &p, x, &mut Mode::Eval)?;
        Ok(g.value(*hidden.last().expect("at least one layer")).clone())
    }

    /// Head predictions in evaluation mode.
    pub fn predict(&self, wave: &Waveform) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, wave, &mut Mode::Eval)?;
        Ok(out.preds.iter().map(|&v| g.value(v).clone()).collect())
    }

    pub fn to_checkpoint(&self, config_fingerprint: &str, seed: u64) -> Checkpoint {
        let meta = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::from_store(STUDENT_KIND, config_fingerprint, seed, meta, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(STUDENT_KIND)?;
        let config: StudentConfig = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("student config: {e}")))?;
        let mut model = Self::new(&config, 0)?;
        let stored = ck.to_store()?;
        let copied = model.params.copy_matching(&stored, |n| Some(n.to_string()))?;
        if copied != model.params.len() || stored.len() != model.params.len() {
            return Err(Error::Checkpoint("student checkpoint does not match its config".into()));
        }
        Ok(model)
    }
}

/// Builds a student whose front-end and first `config.layers` blocks are
/// copies of the teacher's; heads come fresh from `seed`.
pub fn init_student_from_teacher(teacher: &TeacherModel, config: &StudentConfig, seed: u64) -> Result<StudentModel> {
    if config.encoder != teacher.config.encoder {
        return Err(Error::Config("student and teacher encoder configs differ".into()));
    }
    if config.layers > teacher.config.layers {
        return Err(Error::Config(format!(
            "student has {} layers but the teacher only {}",
            config.layers, teacher.config.layers
        )));
    }
    if let Some(&bad) = config
        .target_layers
        .iter()
        .find(|&&l| l == 0 || l > teacher.config.layers)
    {
        return Err(Error::Config(format!("target layer {bad} outside 1..={}", teacher.config.layers)));
    }
    let mut student = StudentModel::new(config, seed)?;
    let layers = config.layers;
    let copied = student.params.copy_matching(&teacher.params, |name| {
        let keep = name.starts_with("frontend.")
            || name.starts_with("feat_norm.")
            || name
                .strip_prefix("blocks.")
                .and_then(|rest| rest.split('.').next())
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i < layers);
        keep.then(|| name.to_string())
    })?;
    let heads: usize = student.heads.len() * 2;
    if copied + heads != student.params.len() {
        return Err(Error::Config("teacher is missing encoder parameters the student expects".into()));
    }
    Ok(student)
}
