use alloc::string::String;

use crate::geometry::Dims;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid volume dimensions {0:?}: every axis needs at least one voxel")]
    InvalidDimensions(Dims),
    #[error("data length {actual} does not match the {expected} voxels implied by the dimensions")]
    DataLength { expected: usize, actual: usize },
    #[error("voxel spacing must be finite and strictly positive, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("axis {axis} has {len} point(s); at least {required} are needed")]
    DegenerateAxis {
        axis: usize,
        len: usize,
        required: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch { expected: Dims, actual: Dims },
    #[error("feature channel mismatch: fixed has {fixed}, moving has {moving}")]
    ChannelMismatch { fixed: usize, moving: usize },
    #[error("volume {dims:?} too small: every axis needs at least {min} voxels")]
    VolumeTooSmall { dims: Dims, min: usize },
    #[error("pooling kernel {kernel} larger than extent {extent}")]
    KernelTooLarge { kernel: usize, extent: usize },
    #[error("label {label} out of range for {classes} classes")]
    ClassMismatch { label: u32, classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
