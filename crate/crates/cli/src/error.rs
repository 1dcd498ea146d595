use thiserror::Error;

/// Failures of a command, each mapped to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed dataset input.
    #[error("input data: {0}")]
    Data(String),
    /// Missing, truncated or incompatible checkpoint.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown {kind} {id:?}")]
    UnknownEntity { kind: &'static str, id: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Checkpoint(_) => 3,
            CliError::UnknownEntity { .. } => 4,
            CliError::Config(_) | CliError::Other(_) => 1,
        }
    }

    pub(crate) fn io(what: &str, path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{what} {}: {e}", path.display()))
    }
}

impl From<half_core::TrainError> for CliError {
    fn from(e: half_core::TrainError) -> Self {
        CliError::Other(format!("training failed: {e}"))
    }
}

impl From<half_core::ModelError> for CliError {
    fn from(e: half_core::ModelError) -> Self {
        CliError::Other(format!("model: {e}"))
    }
}

impl From<half_core::CorpusError> for CliError {
    fn from(e: half_core::CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}
