//! Student model, distillation objective, cross-distortion training pairs
//! and adversarial distortion training.

mod classifier;
mod loss;
mod student;
mod train;

pub use classifier::{DistortionClassifier, CLASSIFIER_KIND};
pub use loss::{distil_loss, distil_loss_value, DistilTerms};
pub use student::{init_student_from_teacher, StudentConfig, StudentForward, StudentModel, STUDENT_KIND};
pub use train::{
    classifier_phase, dat_step, dev_loss, dev_pairs, distill_run, student_gradients, teacher_targets, DistillConfig,
    DistillOutcome, LogRecord, Optimizers, PairSource, PreparedPair, StepLosses, TrainLog,
};

#[cfg(test)]
mod tests;
