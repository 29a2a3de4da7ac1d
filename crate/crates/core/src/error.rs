use std::path::Path;

use nanet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("not a letter A-Z: {0:?}")]
    NonLetterInput(char),
    #[error("no letter has Morse code {0:?}")]
    UnknownCode(String),
    #[error("invalid render spec: {0}")]
    InvalidSpec(String),
    #[error("glyph layout exceeds the canvas: {0}")]
    SpecOverflow(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    IoFailure { path: String, message: String },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("dataset has no {0} items")]
    MissingSplit(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: mse {mse}, ce {ce}")]
    NonFiniteLoss { epoch: usize, batch: usize, mse: f32, ce: f32 },
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

impl Error {
    /// Variant name, used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonLetterInput(_) => "NonLetterInput",
            Error::UnknownCode(_) => "UnknownCode",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::SpecOverflow(_) => "SpecOverflow",
            Error::InvalidImage(_) => "InvalidImage",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::IoFailure { .. } => "IoFailure",
            Error::MalformedManifest(_) => "MalformedManifest",
            Error::MissingSplit(_) => "MissingSplit",
            Error::Tensor(TensorError::ShapeMismatch(_)) => "ShapeMismatch",
            Error::Tensor(_) => "TensorError",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::ChecksumMismatch(_) => "ChecksumMismatch",
            Error::MalformedCheckpoint(_) => "MalformedCheckpoint",
            Error::EmptyMatrix => "EmptyMatrix",
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::IoFailure { path: path.display().to_string(), message: err.to_string() }
    }
}
