use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("stage `{stage}` has not been run in this output directory; run `distortkd {command}` first")]
    MissingStage { stage: String, command: String },

    #[error("stage `{stage}` was produced under a different configuration or seed; re-run `distortkd {command}` into a fresh output directory")]
    StaleStage { stage: String, command: String },

    #[error("refusing to overwrite stage `{stage}` in {}: it was produced with stage key {found}, the current run needs {expected}", path.display())]
    Overwrite {
        stage: String,
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("{}: does not match the hash recorded for stage `{stage}`", path.display())]
    Corrupt { stage: String, path: PathBuf },

    #[error("unknown model `{0}`; expected T1, T1' or a variant id such as S4' or S1+DAT")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] distortkd::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingStage { .. } => "missing_dependency",
            CliError::StaleStage { .. } => "stale_dependency",
            CliError::Overwrite { .. } => "overwrite_refused",
            CliError::Corrupt { .. } => "corrupt_artifact",
            CliError::UnknownModel(_) => "unknown_model",
            CliError::Config(_) => "config",
            CliError::Core(distortkd::Error::Diverged { .. }) => "diverged",
            CliError::Core(_) => "core",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
        }
    }

    pub fn stage(&self) -> Option<&str> {
        match self {
            CliError::MissingStage { stage, .. }
            | CliError::StaleStage { stage, .. }
            | CliError::Overwrite { stage, .. }
            | CliError::Corrupt { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// `{"error": {"kind", "message", "stage"?}}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = serde_json::json!({ "kind": self.kind(), "message": self.to_string() });
        if let Some(stage) = self.stage() {
            body["stage"] = stage.into();
        }
        serde_json::json!({ "error": body })
    }
}
