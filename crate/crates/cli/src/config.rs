//! Run configuration: one JSON document covering every stage.
//!
//! Unknown keys are rejected at every level the CLI owns; missing keys take
//! the defaults below. The defaults are the desk-scale matrix settings, so
//! an empty `{}` config reproduces the full comparison.

use std::fs;
use std::path::{Path, PathBuf};

use distortkd::augmentor::AugmentPolicy;
use distortkd::distill::DistillConfig;
use distortkd::eval::{EvalConfig, TsneConfig};
use distortkd::synth_corpus::CorpusConfig;
use distortkd::teacher::{LabelerConfig, MaskedTrainConfig, TeacherConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::variant::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub model: TeacherConfig,
    pub labeler: LabelerConfig,
    pub pretrain: MaskedTrainConfig,
    pub adapt: MaskedTrainConfig,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            model: TeacherConfig::default(),
            labeler: LabelerConfig::default(),
            pretrain: MaskedTrainConfig {
                steps: 600,
                ..MaskedTrainConfig::default()
            },
            adapt: MaskedTrainConfig {
                steps: 300,
                warmup_steps: 0,
                ..MaskedTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub eval: EvalConfig,
    pub tsne: TsneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixSection {
    pub replicates: usize,
    /// Variant ids to distill; every model in the comparison by default.
    pub variants: Vec<String>,
    /// Models that get the embedding visualization.
    pub visualize: Vec<String>,
}

impl Default for MatrixSection {
    fn default() -> Self {
        Self {
            replicates: 2,
            variants: Variant::MATRIX.iter().map(|v| v.id.to_string()).collect(),
            visualize: vec!["T1".into(), "T1'".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub policy: AugmentPolicy,
    pub teacher: TeacherSection,
    /// `setup` and `dat_enabled` are taken from the variant being distilled.
    pub distill: DistillConfig,
    pub eval: EvalSection,
    pub matrix: MatrixSection,
    /// Where artifacts go when `--out` is not given. Not part of the hash.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            policy: AugmentPolicy::default(),
            teacher: TeacherSection::default(),
            distill: DistillConfig {
                steps: 600,
                ..DistillConfig::default()
            },
            eval: EvalSection::default(),
            matrix: MatrixSection::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.policy.validate()?;
        self.teacher.pretrain.validate()?;
        self.teacher.adapt.validate()?;
        self.distill.validate()?;
        if self.policy.sample_rate != self.corpus.sample_rate {
            return Err(CliError::Config(format!(
                "policy sample rate {} differs from corpus sample rate {}",
                self.policy.sample_rate, self.corpus.sample_rate
            )));
        }
        if self.teacher.model.n_clusters != self.teacher.labeler.n_clusters {
            return Err(CliError::Config(format!(
                "teacher predicts {} clusters but the labeler fits {}",
                self.teacher.model.n_clusters, self.teacher.labeler.n_clusters
            )));
        }
        if self.matrix.replicates == 0 {
            return Err(CliError::Config("matrix.replicates must be at least 1".into()));
        }
        for id in &self.matrix.variants {
            Variant::parse(id)?;
        }
        Ok(())
    }

    /// Canonical JSON of everything that affects results.
    pub fn canonical_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }

    pub fn sha256(&self) -> String {
        hash_json(&self.canonical_json())
    }
}

/// SHA-256 of a JSON value's compact serialization. Struct fields serialize
/// in declaration order, so equal configs hash equally.
pub fn hash_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("json value serializes")))
}
