use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} outside vocabulary of size {size}")]
    UnknownToken { id: usize, size: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error("corrupt file {}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn incompatible(msg: impl Into<String>) -> Self {
        Self::Incompatible(msg.into())
    }

    /// True for errors caused by inputs that do not belong together
    /// (vocabulary, checksum, or lineage mismatches, corrupt artifacts).
    pub fn is_incompatibility(&self) -> bool {
        matches!(self, Self::Incompatible(_) | Self::Corrupt { .. } | Self::UnknownToken { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
