//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: unknown key, bad value, unsatisfiable setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// An attribute reference that is neither in the canonical map nor
    /// self-canonical.
    #[error("configuration error: unknown attribute `{0}`")]
    UnknownAttribute(String),

    /// Internal invariant violated (length mismatch, out-of-range entry).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// The execution log holds nothing to train from.
    #[error("no training data: {0}")]
    NoTrainingData(String),

    /// Training set cannot identify a model (e.g. a single class).
    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    /// Serialized artifact with an unsupported version header.
    #[error("unsupported file version: {0}")]
    Version(String),

    /// Malformed serialized artifact or trace.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
