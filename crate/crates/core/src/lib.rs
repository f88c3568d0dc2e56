// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the command-line tools and experiment runs.
pub type Real = f32;
pub type Detector = pipeline::SingleDetector<Real>;
pub type Fused = pipeline::FusedModel<Real>;
pub type UpperBound = pipeline::UpperBoundModel<Real>;
pub type Sample = pipeline::TrainSample<Real>;
pub type FrocCurve = metrics::FrocCurve<f64>;
