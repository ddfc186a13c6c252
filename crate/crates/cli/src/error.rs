use std::path::Path;

use thiserror::Error;

use evcoref::corpus::CorpusError;
use evcoref::ModelError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Corpus(_) => "corpus",
            CliError::Model(ModelError::SchemaMismatch { .. }) => "schema",
            CliError::Model(ModelError::Diverged { .. }) => "diverged",
            CliError::Model(_) => "model",
            CliError::Data(_) => "data",
            CliError::CheckFailed(_) => "check",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `error: <command>: <kind>: <message>` on a single line.
    pub fn diagnostic(&self, command: &str) -> String {
        let message = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {command}: {}: {message}", self.kind())
    }
}
