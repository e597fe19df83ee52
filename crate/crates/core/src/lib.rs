//! Adaptive nonparametric estimation of the mean and covariance functions of
//! functional data observed with noise at discrete points.
//!
//! The pipeline is "smooth first, then estimate":
//!
//! 1. [`regularity`] estimates the local regularity `α = δ + H_δ` of the
//!    underlying process, its Hölder constant and the noise level.
//! 2. [`mean`] picks, at every point, the local-polynomial bandwidth that
//!    minimizes a plug-in risk bound and averages the smoothed curves.
//! 3. [`covariance`] does the same for the second-moment surface off the
//!    diagonal and fills a shrinking diagonal band from its boundary.
//!
//! [`simulation`] generates Gaussian-process data with known regularity and
//! [`evaluation`] runs replicated experiments against the known truth.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
mod error;
pub mod evaluation;
pub mod kernel;
pub mod mean;
pub mod model;
pub mod pipeline;
pub(crate) mod quadrature;
pub mod regularity;
pub mod simulation;

pub use error::{Error, Result};
pub use kernel::{Kernel, LpWeights};
pub use model::{CurveObservations, Design, EvalGrid, FunctionalDataset};
