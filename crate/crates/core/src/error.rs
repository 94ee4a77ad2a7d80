use std::io;

use thiserror::Error;

pub type Result<T, E = EarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EarError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("growth failed: {0}")]
    Growth(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u16, found: u16 },

    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl EarError {
    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        EarError::Dimension { expected, actual }
    }

    /// True for errors produced while decoding a binary container.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            EarError::BadMagic { .. }
                | EarError::UnsupportedVersion { .. }
                | EarError::Truncated { .. }
                | EarError::NonFinite(_)
                | EarError::Malformed(_)
        )
    }
}
