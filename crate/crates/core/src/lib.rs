//! Uncertainty moments of a trained network read off the Gaussian potential
//! field of its weights.
//!
//! The pipeline pools a model's weights into a [`WeightField`], evaluates the
//! field (and its analytic derivatives) at each prediction, projects it onto
//! normalized Hermite orders and turns each order into a nonnegative mode
//! value. The mean of the modes is the per-prediction uncertainty score.
//!
//! The numeric core ([`kernel_field`], [`hermite`], [`modes`], [`metrics`]) is
//! generic over [`Scalar`] so it runs in `f32` or `f64`; the aliases below fix
//! the working precision used by the ingestion, training and CLI layers.

pub mod bench;
pub mod demo;
pub mod error;
pub mod hermite;
pub mod ingest;
pub mod kernel_field;
pub mod manifest;
pub mod metrics;
pub mod mlp;
pub mod modes;
pub mod pipeline;
pub mod scalar;
pub mod shift;

pub use error::{QipfError, Result};
pub use hermite::{hermite_normalized, HermiteTable, HermiteValue, MAX_HERMITE_ORDER};
pub use kernel_field::{
    effective_sigma, gaussian_kernel, silverman_bandwidth, BandwidthRule, FieldEval, ScaledEval,
    WeightField,
};
pub use modes::{decompose, uncertainty_score, ModeDecomposition, QipfConfig};
pub use scalar::{CompensatedSum, Scalar};

/// Working precision of the ingestion, training and command-line layers.
pub type Real = f64;

/// Weight field in the working precision.
pub type Field = WeightField<Real>;
/// Single-precision weight field, useful when memory matters more than digits.
pub type FieldF32 = WeightField<f32>;
/// Mode decomposition in the working precision.
pub type Decomposition = ModeDecomposition<Real>;
/// Mode decomposition computed in single precision.
pub type DecompositionF32 = ModeDecomposition<f32>;
/// Decomposition settings in the working precision.
pub type Config = QipfConfig<Real>;
/// Scored dataset in the working precision.
pub type Scored = metrics::ScoredDataset<Real>;
