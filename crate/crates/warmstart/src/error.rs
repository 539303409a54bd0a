//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Dimension mismatch between interacting objects.
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Factorization hit a zero or unusably small pivot.
    FactorizationFailed { pivot: usize },
    /// A precondition on an argument was violated.
    InvalidArgument(String),
    /// A configuration asked for something unsupported.
    Config(String),
    /// Non-finite value where finite state is required.
    NonFinite(&'static str),
    /// Training loss became non-finite; carries the last finite epoch index.
    Diverged { epoch: usize },
    /// A required input (ground truths, model file, dataset) is missing.
    Missing(String),
    Io(std::io::Error),
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                got,
            } => write!(f, "shape mismatch in {what}: expected {expected}, got {got}"),
            Error::FactorizationFailed { pivot } => {
                write!(f, "factorization failed at pivot {pivot}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Diverged { epoch } => {
                write!(f, "training diverged; last finite epoch was {epoch}")
            }
            Error::Missing(msg) => write!(f, "missing input: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
