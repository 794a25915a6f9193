//! Error taxonomy shared by the whole crate.
//!
//! Variants map onto the CLI exit codes: config errors exit 2, data errors
//! exit 3, numerical errors exit 4. Argument and state errors indicate a
//! caller contract violation and exit 1 when they escape to the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or insufficient input data (trace files, ingested vectors).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical routine failed to converge or produced an invalid value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An argument violated an operation's preconditions.
    #[error("argument error: {0}")]
    Argument(String),

    /// An operation was called in a state that cannot serve it.
    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error when surfaced by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numerical(_) => 4,
            Error::Argument(_) | Error::State(_) | Error::Io(_) => 1,
        }
    }

    /// Prefixes the message with `context`, keeping the variant (and thus
    /// the exit code) intact.
    pub fn with_context(self, context: &str) -> Error {
        match self {
            Error::Config(m) => Error::Config(format!("{context}: {m}")),
            Error::Data(m) => Error::Data(format!("{context}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{context}: {m}")),
            Error::Argument(m) => Error::Argument(format!("{context}: {m}")),
            Error::State(m) => Error::State(format!("{context}: {m}")),
            Error::Io(e) => Error::Data(format!("{context}: {e}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
