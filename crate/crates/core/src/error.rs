use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or arguments that violate an operation's preconditions.
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config line {line}, key `{key}`: {msg}")]
    ConfigLine { line: usize, key: String, msg: String },

    #[error("format error in {path} at byte {offset}: {msg}")]
    Format { path: PathBuf, offset: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical abort in {phase} at iteration {iter}: {source}")]
    Numerical {
        phase: &'static str,
        iter: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("incompatible inputs: {0}")]
    Compatibility(String),
}

impl Error {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigLine { .. } | Error::Compatibility(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Numerical { .. } | Error::NonFinite { .. } => 4,
            Error::Contract { .. } => 1,
        }
    }
}
