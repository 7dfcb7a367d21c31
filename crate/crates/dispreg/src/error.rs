use std::path::PathBuf;

use thiserror::Error;

/// Failures of the file formats and the command-line driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: truncated payload, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: unsupported datatype {datatype}")]
    UnsupportedDatatype { path: PathBuf, datatype: String },
    #[error("{path}: unsupported format: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: {dims} dimensions with extent > 1, only 3D volumes are supported")]
    TooManyDimensions { path: PathBuf, dims: usize },
    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("value {value} cannot be stored exactly as {dtype}")]
    Unrepresentable { value: f32, dtype: &'static str },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dispreg_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Header {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 1 usage/configuration, 2 I/O or file format,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use dispreg_core::Error as Core;
        match self {
            Self::Config(_) => 1,
            Self::Core(Core::NonFinite(_)) => 3,
            Self::Core(
                Core::InvalidParameter(_)
                | Core::KernelTooLarge { .. }
                | Core::InvalidSpacing(_)
                | Core::InvalidDimensions(_),
            ) => 1,
            Self::Core(_) => 2,
            _ => 2,
        }
    }
}
