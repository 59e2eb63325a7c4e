use std::fmt;
use std::path::Path;

use signspeak_core::Error as CoreError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Data = 2,
    Training = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config keys or values.
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or malformed input files.
    #[error("{0}")]
    Data(String),
    /// Divergence or other failure while fitting a model.
    #[error("{0}")]
    Training(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::Data(_) => ExitCode::Data,
            CliError::Training(_) => ExitCode::Training,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Training(m) => CliError::Training(format!("{what}: {m}")),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let msg = err.to_string();
        match err {
            CoreError::Config(_) | CoreError::Usage(_) => CliError::Usage(msg),
            CoreError::Input(_) | CoreError::Shape { .. } => CliError::Data(msg),
            CoreError::Diverged { .. } | CoreError::NonFinite { .. } | CoreError::NonFiniteGradient { .. } => {
                CliError::Training(msg)
            }
        }
    }
}
