use rand::Rng;

use super::spec::{DistortionLabel, DistortionSpec, NonAdditive};
use crate::audio_dsp::{band_reject, convolve_trunc, image_method_rir, mix_at_snr, pitch_shift, RirParams};
use crate::error::{Error, Result};
use crate::synth_corpus::{NoiseBank, TrainingBanks};
use crate::wave::Waveform;

/// A distorted waveform with its realized plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Distorted {
    pub wave: Waveform,
    pub label: DistortionLabel,
    pub spec: DistortionSpec,
}

/// Reverberates `x` and rescales the result back to the input RMS.
pub(crate) fn reverberate(x: &Waveform, params: &RirParams) -> Result<Waveform> {
    let rir = image_method_rir(params, x.sample_rate)?;
    let mut wet = convolve_trunc(x, &rir)?;
    let (rms_in, rms_out) = (x.rms(), wet.rms());
    if rms_out > 0.0 {
        for s in &mut wet.samples {
            *s *= rms_in / rms_out;
        }
    }
    Ok(wet)
}

pub(crate) fn apply_non_additive(x: &Waveform, effect: &NonAdditive) -> Result<Waveform> {
    match effect {
        NonAdditive::Reverberation { rir } => reverberate(x, rir),
        NonAdditive::PitchShift { cents } => Ok(pitch_shift(x, *cents)),
        NonAdditive::BandReject { center_hz, q } => band_reject(x, *center_hz, center_hz / q),
    }
}

/// Applies a plan with any bank lookup. Order: non-additive effect, then room
/// response of the additive entry if any, then noise mixing.
pub(crate) fn apply_with<'b, R: Rng + ?Sized>(
    utt: &Waveform,
    spec: &DistortionSpec,
    lookup: impl Fn(crate::synth_corpus::BankName) -> Result<&'b NoiseBank>,
    rng: &mut R,
) -> Result<(Waveform, DistortionSpec)> {
    let mut realized = spec.clone();
    let mut wave = match &spec.non_additive {
        Some(effect) => apply_non_additive(utt, effect)?,
        None => utt.clone(),
    };
    if let Some(add) = &mut realized.additive {
        let bank = lookup(add.bank)?;
        if let Some(rir) = &add.rir {
            wave = reverberate(&wave, rir)?;
        }
        let clip_index = match add.clip_index {
            Some(i) => i,
            None => rng.random_range(0..bank.clips.len()),
        };
        let clip = bank
            .clips
            .get(clip_index)
            .ok_or_else(|| Error::Config(format!("bank `{}` has no clip {clip_index}", bank.name)))?;
        let (mixed, offset) = match add.crop_offset {
            Some(o) => (crate::audio_dsp::mix_at_snr_with_offset(&wave, &clip.wave, add.snr_db, o)?, o),
            None => mix_at_snr(&wave, &clip.wave, add.snr_db, rng)?,
        };
        wave = mixed;
        add.clip_index = Some(clip_index);
        add.crop_offset = Some(offset);
    }
    debug_assert_eq!(wave.len(), utt.len());
    Ok((wave, realized))
}

/// Applies a training-time plan. Held-out banks are refused.
pub fn apply_spec<R: Rng + ?Sized>(
    utt: &Waveform,
    spec: &DistortionSpec,
    banks: &TrainingBanks<'_>,
    rng: &mut R,
) -> Result<Distorted> {
    let label = DistortionLabel::from_spec(spec)?;
    let (wave, spec) = apply_with(utt, spec, |name| banks.get(name), rng)?;
    Ok(Distorted { wave, label, spec })
}
