//! Dense probabilistic displacement registration of 3D volumes.
//!
//! The crate aligns a moving volume onto a fixed one in a single feed-forward
//! pass over a quantised displacement space:
//!
//! 1. handcrafted dense features ([`features`]),
//! 2. exhaustive feature dissimilarity per control point and offset
//!    ([`correlation`]), giving a 6D cost tensor,
//! 3. approximate min-convolutions over the offset dimensions alternated with
//!    mean-field filtering over the spatial dimensions ([`regularizer`]),
//! 4. a softmax over offsets, the expected displacement, upsampling and
//!    warping ([`transform`]), optionally followed by per-pair gradient
//!    descent on the cost tensor ([`instance_opt`]).
//!
//! Everything here is pure computation on in-memory buffers. The crate is
//! `no_std` and only needs `alloc`; file formats, the command-line driver and
//! thread pools live in the `dispreg` companion crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod correlation;
pub mod error;
pub mod features;
pub mod geometry;
pub mod instance_opt;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod regularizer;
pub mod rng;
pub mod transform;

pub use correlation::{dissimilarity_tensor, flop_estimate, CostTensor, Metric};
pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureVolume};
pub use geometry::{
    ControlGrid, Dims, DisplacementField, DisplacementSpace, IntensityVolume, LabelVolume, Point3,
    Volume,
};
pub use instance_opt::{refine, InstanceOptConfig};
pub use metrics::{dice, jacobian_stats, JacobianStats, RegistrationReport};
pub use phantom::{Deformation, Phantom, PhantomSpec};
pub use pipeline::{
    build_report, evaluate_field, register, register_observed, register_with, LabelPair,
    RegistrationOutput, RowExecutor, Sequential,
};
pub use regularizer::{Affine, RegularizerParams};
pub use transform::{ProbTensor, RegistrationConfig, ThirdComponentPenalty};
