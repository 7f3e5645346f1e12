//! Evaluation-time conditions. This is the only place held-out noise banks
//! are reachable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::apply::apply_with;
use super::policy::{sample_additive, sample_non_additive, sample_room, sample_spec, AugmentPolicy};
use super::spec::{DistortionSpec, NonAdditiveKind};
use crate::error::Result;
use crate::synth_corpus::{BankName, NoiseBanks};
use crate::wave::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    /// A draw from the training policy (clean, one or two distortions).
    #[serde(rename = "2dist")]
    TwoDist,
    MusanLike,
    Gaussian,
    WhamLike,
    Reverberation,
    FsdLike,
    DnsLike,
}

impl Condition {
    /// Downstream accuracy conditions.
    pub const EVAL: [Condition; 4] = [Condition::Clean, Condition::TwoDist, Condition::FsdLike, Condition::DnsLike];
    /// Embedding-visualization conditions.
    pub const VISUAL: [Condition; 6] = [
        Condition::Clean,
        Condition::MusanLike,
        Condition::Gaussian,
        Condition::Reverberation,
        Condition::FsdLike,
        Condition::DnsLike,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::TwoDist => "2dist",
            Condition::MusanLike => "musan_like",
            Condition::Gaussian => "gaussian",
            Condition::WhamLike => "wham_like",
            Condition::Reverberation => "reverberation",
            Condition::FsdLike => "fsd_like",
            Condition::DnsLike => "dns_like",
        }
    }

    pub fn is_distorted(self) -> bool {
        self != Condition::Clean
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A test-time waveform and the plan that produced it (diagnostic only).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSample {
    pub wave: Waveform,
    pub spec: DistortionSpec,
}

pub fn condition_spec<R: Rng + ?Sized>(condition: Condition, policy: &AugmentPolicy, rng: &mut R) -> Result<DistortionSpec> {
    let mut single = |bank| DistortionSpec {
        additive: Some(sample_additive(rng, policy, bank)),
        ..DistortionSpec::default()
    };
    Ok(match condition {
        Condition::Clean => DistortionSpec::clean(),
        Condition::TwoDist => sample_spec(rng, policy)?,
        Condition::MusanLike => single(BankName::MusanLike),
        Condition::Gaussian => single(BankName::Gaussian),
        Condition::WhamLike => single(BankName::WhamLike),
        Condition::FsdLike => single(BankName::FsdLike),
        Condition::Reverberation => DistortionSpec {
            non_additive: Some(sample_non_additive(rng, policy, NonAdditiveKind::Reverberation)),
            ..DistortionSpec::default()
        },
        Condition::DnsLike => {
            let mut add = sample_additive(rng, policy, BankName::DnsLike);
            add.rir = Some(sample_room(rng, policy));
            DistortionSpec {
                additive: Some(add),
                ..DistortionSpec::default()
            }
        }
    })
}

/// Builds the test-time version of `utt` for `condition`.
pub fn build_eval_condition<R: Rng + ?Sized>(
    utt: &Waveform,
    condition: Condition,
    banks: &NoiseBanks,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<ConditionSample> {
    let spec = condition_spec(condition, policy, rng)?;
    let (wave, spec) = apply_with(utt, &spec, |name| Ok(banks.get(name)), rng)?;
    Ok(ConditionSample { wave, spec })
}
