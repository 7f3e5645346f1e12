//! Signal-level distortion primitives.
//!
//! Every operation here is length-preserving so that teacher and student
//! hidden sequences stay frame-aligned when they see differently distorted
//! copies of the same utterance.

mod conv;
mod mel;
mod mix;
mod notch;
mod pitch;
mod rir;

pub use conv::{convolve_trunc, convolve_trunc_taps};
pub use mel::{log_mel, mel_filterbank, MelConfig};
pub use mix::{gaussian_noise, mix_at_snr, mix_at_snr_with_offset, pick_crop_offset, snr_db};
pub use notch::{band_reject, Biquad};
pub use pitch::pitch_shift;
pub use rir::{image_method_rir, Rir, RirParams, SPEED_OF_SOUND};
