//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by schema handling, search, simulation and reporting.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (schema, flow, policy or config files).
    #[error("parse error at {path}:{line}:{col}: {msg}")]
    Parse {
        path: String,
        line: usize,
        col: usize,
        msg: String,
    },
    /// An operation was invoked outside its contract (arity mismatch,
    /// flow too short, ...). Distinct from domain invalidity.
    #[error("{0}")]
    Precondition(String),
    /// An instance, flow or variant violates a declared constraint.
    #[error("constraint violation: {0}")]
    Constraint(String),
    /// An enumeration would exceed the configured cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    /// Invalid configuration values (weights, thresholds, distributions).
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn parse(path: impl Into<String>, line: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            col,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code category for command-line front ends:
    /// 2 parse/precondition/config, 3 constraint, 4 capacity, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Precondition(_) | Error::Config(_) => 2,
            Error::Constraint(_) => 3,
            Error::Capacity(_) => 4,
            Error::Io { .. } | Error::Internal(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
