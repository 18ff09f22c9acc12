//! Error type shared across the crate, with process exit-code mapping for the CLI.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameter, malformed config file, unknown arm name.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input: shape mismatch, NaN input, malformed data row.
    #[error("input error: {0}")]
    Input(String),

    /// Filesystem failure while reading or writing artifacts.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Numeric failure: divergence, non-finite parameter, failed stochasticity check.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A condition that is impossible by construction was observed.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code for the CLI: 0 success, 2 configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) | Error::Io(_) => 3,
            Error::Numeric(_) | Error::Internal(_) => 4,
        }
    }
}
