use hedgesim::HedgeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numeric(HedgeError),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<HedgeError> for CliError {
    fn from(e: HedgeError) -> Self {
        if e.is_validation() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numeric(e)
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
