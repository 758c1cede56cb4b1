use std::path::Path;

use thiserror::Error;
use vqmpt::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or unusable inputs; exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failure writing outputs; exit code 3.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub(crate) fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }

    pub(crate) fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(m) => CliError::Io(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::output(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::output(path, e))
}
