use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an argument outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Meshes or functions that must be related (shared roots, nesting,
    /// matching generation) are not.
    #[error("structural mismatch: {0}")]
    Structure(String),

    /// A documented precondition of a numerical operation failed.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A factorization or iteration broke down.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Newton did not reach the requested tolerance.
    #[error("newton failed after {iterations} iterations (residual {residual:.3e})")]
    Newton { iterations: usize, residual: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("encoding error: {0}")]
    Encoding(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
