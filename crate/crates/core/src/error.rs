use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraint.
    #[error("invalid `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    #[error("configuration parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no oscillation: {0}")]
    NoOscillation(String),

    #[error("oscillator is not injection locked: {0}")]
    NotLocked(String),

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence { what: String, iterations: usize },

    #[error("singular expression: {0}")]
    Singular(String),

    #[error("simulation diverged at node {node} (t = {time:e} s)")]
    Instability { node: usize, time: f64 },

    #[error("node {node} is dead (fundamental amplitude {amplitude:e} V)")]
    DeadNode { node: usize, amplitude: f64 },

    #[error("oscillator failed to start: {0}")]
    Startup(String),

    #[error("unlocked grid points: {failed:?}")]
    PartialLock { failed: Vec<usize> },

    #[error("mismatch study invalid at k_inj = {k_inj}: {unlocked} of {total} samples unlocked")]
    StudyInvalid {
        k_inj: f64,
        unlocked: usize,
        total: usize,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Parse { .. } => 1,
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
