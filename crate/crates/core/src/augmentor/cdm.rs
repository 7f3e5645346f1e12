use rand::Rng;
use serde::{Deserialize, Serialize};

use super::apply::apply_spec;
use super::policy::{sample_spec, AugmentPolicy};
use super::spec::{DistortionLabel, DistortionSpec};
use crate::error::Result;
use crate::synth_corpus::TrainingBanks;
use crate::wave::Waveform;

/// Which inputs teacher and student see during distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    /// Both clean.
    None,
    /// Teacher clean, student distorted.
    Setup1,
    /// Independent distortions for teacher and student.
    Setup2,
    /// One distortion applied identically to both.
    Setup2Same,
}

impl Setup {
    pub const ALL: [Setup; 4] = [Setup::None, Setup::Setup1, Setup::Setup2, Setup::Setup2Same];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::None => "none",
            Setup::Setup1 => "setup1",
            Setup::Setup2 => "setup2",
            Setup::Setup2Same => "setup2_same",
        }
    }

    /// Whether the teacher input is always the clean utterance.
    pub fn teacher_is_clean(self) -> bool {
        matches!(self, Setup::None | Setup::Setup1)
    }
}

impl std::str::FromStr for Setup {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Setup::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown setup `{s}`")))
    }
}

/// Teacher and student views of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct CdmPair {
    pub teacher_wave: Waveform,
    pub student_wave: Waveform,
    pub student_label: DistortionLabel,
    pub setup: Setup,
    pub teacher_spec: DistortionSpec,
    pub student_spec: DistortionSpec,
}

pub fn make_cdm_pair<R: Rng + ?Sized>(
    utt: &Waveform,
    setup: Setup,
    banks: &TrainingBanks<'_>,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<CdmPair> {
    let clean = || (utt.clone(), DistortionSpec::clean());
    let (teacher, student, label) = match setup {
        Setup::None => (clean(), clean(), DistortionLabel::clean()),
        Setup::Setup1 => {
            let spec = sample_spec(rng, policy)?;
            let d = apply_spec(utt, &spec, banks, rng)?;
            (clean(), (d.wave, d.spec), d.label)
        }
        Setup::Setup2 => {
            let t_spec = sample_spec(rng, policy)?;
            let s_spec = sample_spec(rng, policy)?;
            let t = apply_spec(utt, &t_spec, banks, rng)?;
            let s = apply_spec(utt, &s_spec, banks, rng)?;
            ((t.wave, t.spec), (s.wave, s.spec), s.label)
        }
        Setup::Setup2Same => {
            let spec = sample_spec(rng, policy)?;
            let d = apply_spec(utt, &spec, banks, rng)?;
            ((d.wave.clone(), d.spec.clone()), (d.wave, d.spec), d.label)
        }
    };
    Ok(CdmPair {
        teacher_wave: teacher.0,
        student_wave: student.0,
        student_label: label,
        setup,
        teacher_spec: teacher.1,
        student_spec: student.1,
    })
}
