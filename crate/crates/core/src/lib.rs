//! Gaussian-process emulation of spatial maps driven by functional inputs.
//!
//! The covariance between an output at `(scenario, location)` pairs is the
//! product of a correlation between the scenarios' time-series drivers and a
//! spatial covariance:
//!
//! ```text
//! k((F, x), (F', x')) = k_f(F, F') * k_x(x, x')
//! ```
//!
//! Functional drivers are projected per channel onto a truncated PCA basis
//! ([`funspace`]) and compared through an L² distance in coefficient space.
//! When every scenario is observed on the same spatial design the training
//! covariance is a Kronecker product and all inference is carried out on the
//! two factors ([`kronlin`]), never on the full `RS × RS` matrix.
//!
//! Modules:
//! - [`funspace`]: functional inputs, PCA bases, projections and distances
//! - [`kernels`]: stationary kernels and the separable covariance
//! - [`kronlin`]: Kronecker-structured Cholesky algebra
//! - [`gp`]: likelihood, ML fitting, prediction, forecasting, leave-one-out
//! - [`design`]: flooding probability, k-means, spatial DoE, LHDs
//! - [`synth`]: synthetic scenario and map generators
//! - [`eval`]: RMSE, Q², coverage accuracy, flood categories
//! - [`optim`]: the derivative-free local search used by the fitter

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod eval;
pub mod funspace;
pub mod gp;
pub mod kernels;
pub mod kronlin;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};

/// A point in the plane, `(x1, x2)`.
pub type Point2 = [f64; 2];
