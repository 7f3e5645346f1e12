use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Additive, DistortionSpec, NonAdditive, NonAdditiveKind};
use crate::audio_dsp::RirParams;
use crate::error::{Error, Result};
use crate::synth_corpus::BankName;

/// Training-time distortion sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub p_clean: f64,
    pub p_add_only: f64,
    pub p_nonadd_only: f64,
    pub p_both: f64,
    pub sample_rate: u32,
    pub snr_db: (f64, f64),
    pub pitch_cents: f64,
    /// Notch centre range in Hz; the upper end is capped at 0.4 fs.
    pub notch_center_hz: (f64, f64),
    pub notch_q: (f64, f64),
    pub room_side_m: (f64, f64),
    pub absorption: (f64, f64),
    pub reverb_order: u32,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_clean: 0.25,
            p_add_only: 0.25,
            p_nonadd_only: 0.25,
            p_both: 0.25,
            sample_rate: 8000,
            snr_db: (10.0, 20.0),
            pitch_cents: 300.0,
            notch_center_hz: (200.0, 3200.0),
            notch_q: (1.0, 5.0),
            room_side_m: (3.0, 8.0),
            absorption: (0.2, 0.7),
            reverb_order: 3,
        }
    }
}

/// Which of the four structural categories a draw falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Clean,
    AdditiveOnly,
    NonAdditiveOnly,
    Both,
}

impl AugmentPolicy {
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            notch_center_hz: (200.0, 0.4 * f64::from(sample_rate)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = [self.p_clean, self.p_add_only, self.p_nonadd_only, self.p_both];
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("policy probabilities {p:?} must be in [0,1] and sum to 1")));
        }
        if !(self.snr_db.0 <= self.snr_db.1) {
            return Err(Error::Config("snr range is empty".into()));
        }
        let nyq = 0.5 * f64::from(self.sample_rate);
        if !(self.notch_center_hz.0 > 0.0 && self.notch_center_hz.1 < nyq && self.notch_center_hz.0 <= self.notch_center_hz.1)
        {
            return Err(Error::Config(format!("notch range {:?} outside (0, {nyq})", self.notch_center_hz)));
        }
        if !(self.pitch_cents.abs() <= 1200.0) {
            return Err(Error::Config("pitch range exceeds one octave".into()));
        }
        Ok(())
    }

    pub fn category_probs(&self) -> [(Category, f64); 4] {
        [
            (Category::Clean, self.p_clean),
            (Category::AdditiveOnly, self.p_add_only),
            (Category::NonAdditiveOnly, self.p_nonadd_only),
            (Category::Both, self.p_both),
        ]
    }

    /// Probability that two independent draws share the same label.
    pub fn label_collision_probability(&self) -> f64 {
        let (na, nn) = (BankName::IN_DOMAIN.len() as f64, NonAdditiveKind::ALL.len() as f64);
        self.p_clean.powi(2)
            + self.p_add_only.powi(2) / na
            + self.p_nonadd_only.powi(2) / nn
            + self.p_both.powi(2) / (na * nn)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random shoebox room with source and microphone at least 0.5 m apart and
/// 0.5 m from every wall.
pub fn sample_room<R: Rng + ?Sized>(rng: &mut R, policy: &AugmentPolicy) -> RirParams {
    let room = [
        uniform(rng, policy.room_side_m),
        uniform(rng, policy.room_side_m),
        uniform(rng, (2.5, 3.5f64.max(policy.room_side_m.0))),
    ];
    let point = |rng: &mut R| -> [f64; 3] { std::array::from_fn(|a| rng.random_range(0.5..room[a] - 0.5)) };
    let source = point(rng);
    let mut mic = point(rng);
    while ((0..3).map(|a| (source[a] - mic[a]).powi(2)).sum::<f64>()).sqrt() < 0.5 {
        mic = point(rng);
    }
    RirParams {
        room,
        source,
        mic,
        absorption: uniform(rng, policy.absorption),
        max_order: policy.reverb_order,
    }
}

pub fn sample_additive<R: Rng + ?Sized>(rng: &mut R, policy: &AugmentPolicy, bank: BankName) -> Additive {
    Additive {
        bank,
        snr_db: uniform(rng, policy.snr_db),
        clip_index: None,
        crop_offset: None,
        rir: None,
    }
}

pub fn sample_non_additive<R: Rng + ?Sized>(rng: &mut R, policy: &AugmentPolicy, kind: NonAdditiveKind) -> NonAdditive {
    match kind {
        NonAdditiveKind::Reverberation => NonAdditive::Reverberation {
            rir: sample_room(rng, policy),
        },
        NonAdditiveKind::PitchShift => NonAdditive::PitchShift {
            cents: rng.random_range(-policy.pitch_cents..=policy.pitch_cents),
        },
        NonAdditiveKind::BandReject => NonAdditive::BandReject {
            center_hz: uniform(rng, policy.notch_center_hz),
            q: uniform(rng, policy.notch_q),
        },
    }
}

/// Draws a distortion plan: category by the policy, additive bank uniform
/// over the in-domain banks, non-additive kind uniform over three effects.
pub fn sample_spec<R: Rng + ?Sized>(rng: &mut R, policy: &AugmentPolicy) -> Result<DistortionSpec> {
    policy.validate()?;
    let provenance: u64 = rng.random();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut category = Category::Both;
    for (c, p) in policy.category_probs() {
        acc += p;
        if u < acc {
            category = c;
            break;
        }
    }
    let (add, non) = match category {
        Category::Clean => (false, false),
        Category::AdditiveOnly => (true, false),
        Category::NonAdditiveOnly => (false, true),
        Category::Both => (true, true),
    };
    let additive = add.then(|| {
        let bank = BankName::IN_DOMAIN[rng.random_range(0..BankName::IN_DOMAIN.len())];
        sample_additive(rng, policy, bank)
    });
    let non_additive = non.then(|| {
        let kind = NonAdditiveKind::ALL[rng.random_range(0..NonAdditiveKind::ALL.len())];
        sample_non_additive(rng, policy, kind)
    });
    Ok(DistortionSpec {
        additive,
        non_additive,
        rng_provenance: provenance,
    })
}
