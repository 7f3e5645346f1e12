//! Masked-prediction teacher: k-means pseudo-labels over log-mel frames, a
//! strided convolutional front-end with a transformer stack, pre-training,
//! and domain-adaptive continuation on distorted audio.

mod encoder;
mod kmeans;
mod labeler;
mod model;
mod pretrain;

pub use encoder::{normalized_input, ConvSpec, Encoder, EncoderConfig, Mode};
pub use kmeans::{kmeans_fit, KMeans};
pub use labeler::{LabelerConfig, PseudoLabeler};
pub use model::{teacher_hidden, TeacherConfig, TeacherForward, TeacherModel, TEACHER_KIND};
pub use pretrain::{
    adapt_teacher, masked_accuracy, masked_loss, pretrain_teacher, span_mask, MaskedTrainConfig, MaskedTrainLog,
    MaskedTrainRecord,
};
