use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range argument.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value outside the mathematical domain of an operation
    /// (zero likelihoods, zero reference probabilities).
    #[error("domain error: {0}")]
    Domain(String),

    /// A request exceeding a hard size guard.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Inconsistent experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Every hypothesis received zero mass in a min-rule numerator.
    #[error("numeric degeneracy: every hypothesis has zero mass")]
    Degenerate,

    /// Degeneracy raised while a simulation was running.
    #[error("step {step}, agent {agent}: {source}")]
    AtStep {
        step: usize,
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    /// A live invariant failed in checked mode.
    #[error("invariant violated at step {step}, agent {agent}: {detail}")]
    Invariant {
        step: usize,
        agent: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
