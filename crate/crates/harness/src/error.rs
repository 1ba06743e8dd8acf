use std::path::PathBuf;

use pfsmooth::SmcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// The config could not be parsed.
    #[error("invalid config: {0}")]
    Validation(String),

    #[error("invalid config: {field}: {message}")]
    Field { field: String, message: String },

    /// An algorithm failed while running a seed.
    #[error("seed {seed}, {sweep} = {value}: {source}")]
    Run {
        seed: u64,
        sweep: &'static str,
        value: u64,
        #[source]
        source: SmcError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        HarnessError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Process exit status: 1 for config problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::Field { .. } => 1,
            HarnessError::Run { .. } | HarnessError::Io { .. } => 2,
        }
    }
}
