use piquant::FormatError;
use thiserror::Error;

/// Failure classes, each with its own process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Usage(String),
    #[error("bound check failed: {0}")]
    Bound(String),
}

impl CliError {
    pub fn with_context(self, what: &str) -> Self {
        match self {
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::Format(m) => CliError::Format(format!("{what}: {m}")),
            other => other,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Format(_) | CliError::Usage(_) => 2,
            CliError::Bound(_) => 3,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Format(e.to_string())
        }
    }
}
