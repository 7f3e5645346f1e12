//! Reverse-mode autodiff over dense f64 matrices, plus the layers, losses
//! and optimizer the models are built from.

mod adam;
mod checkpoint;
mod gemm;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, GradCheck, REL_ERR_FLOOR};
pub use graph::{cosine, Graph, Var, NORM_EPS};
pub use layers::{sinusoidal_positions, Conv1d, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
pub use params::{Binding, Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
