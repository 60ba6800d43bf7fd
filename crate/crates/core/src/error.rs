use std::path::PathBuf;

/// Errors raised across the pipeline.
///
/// The variant determines the CLI exit code (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or argument.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed, missing, or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure or degenerate input (non-finite values, zero variance, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code scheme: 2 config, 3 data, 4 numeric/degenerate, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Internal(_) => 5,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
