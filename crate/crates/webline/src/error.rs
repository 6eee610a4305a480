//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, dimensions, or settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A simulated state picked up a NaN or infinity.
    #[error("simulation diverged at step {step}: non-finite state component")]
    Diverged { step: usize },

    /// A tension reference reaches or exceeds the modulus-area product,
    /// making the equilibrium velocity recursion singular.
    #[error("singular reference: tension {tension} N must stay below EA = {ea} N")]
    SingularReference { tension: f64, ea: f64 },

    /// The controller could not produce a usable control.
    #[error("controller failure: {0}")]
    Controller(String),

    /// A linear solve or other numerical routine broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
