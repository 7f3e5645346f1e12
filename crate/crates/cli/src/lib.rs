//! Experiment driver: stage-by-stage subcommands over a run directory, and
//! the replicated comparison matrix.

pub mod cli;
pub mod config;
pub mod error;
pub mod matrix;
pub mod pipeline;
pub mod stage;
pub mod variant;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use matrix::{reproduce_matrix, MatrixOptions, SummaryRow, SummaryTable};
pub use pipeline::Run;
pub use variant::{ModelId, Variant};
