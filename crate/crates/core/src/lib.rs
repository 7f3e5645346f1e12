//! Distortion-robust knowledge distillation of self-supervised speech
//! encoders, at desk scale.
//!
//! The crate bundles everything a run needs: a synthetic corpus with noise
//! banks ([`synth_corpus`]), signal-level distortions ([`audio_dsp`]),
//! augmentation plans and cross-distortion pairs ([`augmentor`]), a small
//! reverse-mode autodiff engine ([`nn`]), a masked-prediction teacher
//! ([`teacher`]), the distillation objective with adversarial distortion
//! training ([`distill`]), and invariance probes ([`eval`]).

pub mod audio_dsp;
pub mod augmentor;
pub mod distill;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod synth_corpus;
pub mod teacher;
pub mod wave;

pub use error::{Error, Result};
pub use wave::Waveform;
