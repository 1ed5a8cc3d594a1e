//! Source-free accuracy prediction from classifier logits.
//!
//! The main estimator fits a shared-covariance Gaussian model to the
//! unlabeled target logits, re-derives calibrated posteriors from it, and
//! counts a sample as correct when the last-layer gradient toward its
//! pseudo-label is smaller than the gradient toward the uniform
//! distribution. Baseline estimators and a synthetic distribution-shift
//! benchmark live alongside it.

pub mod baselines;
pub mod bench;
pub mod calibrator;
pub mod error;
pub mod estimator;
pub mod ingest;
pub mod numerics;

pub use error::{Error, ErrorCategory, FormatError, Result};
pub use ingest::{DatasetBundle, EstimateReport, Manifest, NdArray};
pub use numerics::{CholeskyFactor, Matrix};
