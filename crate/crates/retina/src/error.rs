use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum RetinaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("track does not intersect forward layers (cos θ · cos φ ≤ 0)")]
    NoIntersection,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RetinaError>;
