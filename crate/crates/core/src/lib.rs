// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod curves;
pub mod deep_ensemble;
pub mod error;
pub mod gp;
pub mod harness;
pub mod numopt;
pub mod preprocess;
pub mod scaling_law;
pub mod seeding;
pub mod synthgen;

pub use curves::{CurvePoint, CurveSet, LearningCurve, ModelSpec, Provenance};
pub use error::{Error, Result};
pub use synthgen::{ChinchillaParams, NoiseConfig, NoiseKind};
