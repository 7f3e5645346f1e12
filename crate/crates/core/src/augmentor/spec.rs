use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audio_dsp::RirParams;
use crate::error::{Error, Result};
use crate::synth_corpus::BankName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonAdditiveKind {
    Reverberation,
    PitchShift,
    BandReject,
}

impl NonAdditiveKind {
    pub const ALL: [NonAdditiveKind; 3] = [
        NonAdditiveKind::Reverberation,
        NonAdditiveKind::PitchShift,
        NonAdditiveKind::BandReject,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonAdditive {
    Reverberation { rir: RirParams },
    PitchShift { cents: f64 },
    BandReject { center_hz: f64, q: f64 },
}

impl NonAdditive {
    pub fn kind(&self) -> NonAdditiveKind {
        match self {
            NonAdditive::Reverberation { .. } => NonAdditiveKind::Reverberation,
            NonAdditive::PitchShift { .. } => NonAdditiveKind::PitchShift,
            NonAdditive::BandReject { .. } => NonAdditiveKind::BandReject,
        }
    }
}

/// Additive noise. Clip index and crop offset are filled in when the distortion
/// is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Additive {
    pub bank: BankName,
    pub snr_db: f64,
    pub clip_index: Option<usize>,
    pub crop_offset: Option<usize>,
    /// Room response applied to the speech before mixing (evaluation-only
    /// `dns_like` condition).
    pub rir: Option<RirParams>,
}

impl Additive {
    pub fn rir_applied(&self) -> bool {
        self.rir.is_some()
    }
}

/// An augmentation plan: at most one additive and one non-additive effect.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub additive: Option<Additive>,
    pub non_additive: Option<NonAdditive>,
    /// Identifier of the random substream the plan was drawn from.
    pub rng_provenance: u64,
}

impl DistortionSpec {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn is_clean(&self) -> bool {
        self.additive.is_none() && self.non_additive.is_none()
    }

    /// Same distortion structure, ignoring continuous parameters.
    pub fn same_category(&self, other: &Self) -> bool {
        self.additive.as_ref().map(|a| a.bank) == other.additive.as_ref().map(|a| a.bank)
            && self.non_additive.as_ref().map(|n| n.kind()) == other.non_additive.as_ref().map(|n| n.kind())
    }

    /// Equal up to provenance (realized clip and crop included).
    pub fn same_plan(&self, other: &Self) -> bool {
        self.additive == other.additive && self.non_additive == other.non_additive
    }
}

/// Seven-way multi-hot distortion label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionLabel(pub [u8; 7]);

impl DistortionLabel {
    pub const N_CLASSES: usize = 7;
    pub const NAMES: [&'static str; 7] = [
        "musan_like",
        "gaussian",
        "wham_like",
        "reverberation",
        "pitch_shift",
        "band_reject",
        "clean",
    ];
    pub const CLEAN: usize = 6;

    pub fn clean() -> Self {
        let mut v = [0; 7];
        v[Self::CLEAN] = 1;
        Self(v)
    }

    pub fn additive_index(bank: BankName) -> Option<usize> {
        match bank {
            BankName::MusanLike => Some(0),
            BankName::Gaussian => Some(1),
            BankName::WhamLike => Some(2),
            BankName::FsdLike | BankName::DnsLike => None,
        }
    }

    pub fn non_additive_index(kind: NonAdditiveKind) -> usize {
        match kind {
            NonAdditiveKind::Reverberation => 3,
            NonAdditiveKind::PitchShift => 4,
            NonAdditiveKind::BandReject => 5,
        }
    }

    /// Label of a training-time spec; held-out banks have no class.
    pub fn from_spec(spec: &DistortionSpec) -> Result<Self> {
        if spec.is_clean() {
            return Ok(Self::clean());
        }
        let mut v = [0u8; 7];
        if let Some(a) = &spec.additive {
            let idx = Self::additive_index(a.bank).ok_or_else(|| {
                Error::PolicyViolation(format!("held-out bank `{}` has no distortion class", a.bank))
            })?;
            v[idx] = 1;
        }
        if let Some(n) = &spec.non_additive {
            v[Self::non_additive_index(n.kind())] = 1;
        }
        Ok(Self(v))
    }

    pub fn is_clean(&self) -> bool {
        self.0[Self::CLEAN] == 1
    }

    pub fn as_f64(&self) -> [f64; 7] {
        self.0.map(f64::from)
    }

    /// Checks the label invariants: `clean` is exclusive, and at most one
    /// additive and one non-additive class are set.
    pub fn is_valid(&self) -> bool {
        let v = &self.0;
        if v.iter().any(|&x| x > 1) {
            return false;
        }
        let add: u8 = v[0..3].iter().sum();
        let non: u8 = v[3..6].iter().sum();
        if v[Self::CLEAN] == 1 {
            add == 0 && non == 0
        } else {
            add + non >= 1 && add <= 1 && non <= 1
        }
    }
}

impl fmt::Display for DistortionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = (0..7).filter(|&i| self.0[i] == 1).map(|i| Self::NAMES[i]).collect();
        write!(f, "{}", names.join("+"))
    }
}
