use std::io;

use thiserror::Error;

pub type Result<T, E = DdrlError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DdrlError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("division by zero normalizing row {row}: constant row with sigma = 0")]
    DivisionByZero { row: usize },

    #[error("feature {index} is degenerate (constant-magnitude responses)")]
    DegenerateFeature { index: usize },

    #[error("task {task} failed after {attempts} attempts: {reason}")]
    JobFailed { task: usize, attempts: u32, reason: String },

    #[error("invalid labels: {0}")]
    InvalidLabel(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("model file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DdrlError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DdrlError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DdrlError::Shape(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        DdrlError::InsufficientData(msg.into())
    }
}
