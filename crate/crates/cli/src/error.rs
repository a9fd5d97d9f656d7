use std::path::Path;

use pcad_core::datasets::DatasetError;
use pcad_core::model::ModelError;
use pcad_core::pipeline::PipelineError;
use thiserror::Error;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Divergence(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    MissingClass(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 I/O or unreadable input, 2 configuration, 3 training divergence,
    /// 4 checkpoint or shape mismatch, 5 a category lacks a class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } | Self::Input(_) => 1,
            Self::Config(_) => 2,
            Self::Divergence(_) => 3,
            Self::Checkpoint(_) => 4,
            Self::MissingClass(_) => 5,
        }
    }

    pub(crate) fn from_dataset(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { path, source } => Self::Io { path, source },
            other => Self::Input(other.to_string()),
        }
    }

    pub(crate) fn from_checkpoint(path: &Path, e: ModelError) -> Self {
        match e {
            ModelError::Io(source) if source.kind() != std::io::ErrorKind::UnexpectedEof => Self::io(path, source),
            other => Self::Checkpoint(format!("{}: {other}", path.display())),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Self::Config(e.to_string()),
            PipelineError::Divergence { .. } => Self::Divergence(e.to_string()),
            PipelineError::MissingClass { .. } => Self::MissingClass(e.to_string()),
            PipelineError::Model(ModelError::CheckpointMismatch(_) | ModelError::Checkpoint(_)) => {
                Self::Checkpoint(e.to_string())
            }
            other => Self::Input(other.to_string()),
        }
    }
}
