//! Hierarchical forecast reconciliation.
//!
//! A collection of time series is *hierarchical* when some series are defined
//! as sums of others: a total is the sum of regions, a region the sum of
//! stores. Stacking the bottom (most disaggregate) series in a vector `b`,
//! every series in the collection is `y = S b` for a 0/1 summing matrix `S`.
//! Forecasts produced independently for each series almost never satisfy the
//! aggregation identities; *reconciliation* maps them back onto the coherent
//! subspace, ideally gaining accuracy along the way.
//!
//! The crate provides:
//!
//! - [`hierarchy`]: summing matrix `S = [C; I]`, its orthogonal complement
//!   basis, and coherency diagnostics;
//! - [`penreg`]: multivariate least squares, ridge, and group-lasso
//!   regression used to combine the information in all base forecasts;
//! - [`covariance`]: base-error covariance estimators (sample, diagonal,
//!   shrinkage);
//! - [`reconcile`]: classical projections (bottom-up, OLS, WLS, trace
//!   minimization) and regression-based combination reconcilers;
//! - [`tuning`]: penalty grids and rolling-origin cross validation;
//! - [`simulate`]: a factor DGP with known-optimal univariate forecasts for
//!   calibrating the estimators against closed-form targets;
//! - [`evaluate`]: rolling-origin evaluation with MSFE and PRIAL reporting.

pub mod covariance;
pub mod error;
pub mod evaluate;
pub mod hierarchy;
pub mod panel;
pub mod penreg;
pub mod reconcile;
pub mod simulate;
pub mod tuning;

pub use error::{Error, Result};
