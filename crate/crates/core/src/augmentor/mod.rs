//! Distortion plans, their application, and cross-distortion training pairs.
//!
//! Composition order when both effect families are drawn: the non-additive
//! effect alters the speech first, then noise is mixed at the requested SNR
//! relative to the altered speech.

mod apply;
mod cdm;
mod condition;
mod policy;
mod spec;

pub use apply::{apply_spec, Distorted};
pub use cdm::{make_cdm_pair, CdmPair, Setup};
pub use condition::{build_eval_condition, condition_spec, Condition, ConditionSample};
pub use policy::{sample_room, sample_spec, AugmentPolicy, Category};
pub use spec::{Additive, DistortionLabel, DistortionSpec, NonAdditive, NonAdditiveKind};
