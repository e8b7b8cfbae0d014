//! Reconciliation: mapping incoherent base forecasts onto the coherent
//! subspace.
//!
//! Two families are implemented.
//!
//! **Projections** `y_tilde = S G y_hat` with `G` an `n x m` matrix
//! satisfying `G S = I`, so coherent inputs pass through unchanged:
//!
//! - bottom-up: `G = J = [0 I]` keeps the bottom forecasts;
//! - orthogonal (OLS): `P = S (S'S)^-1 S'`;
//! - weighted: `P = S (S' W^-1 S)^-1 S' W^-1` for a positive definite `W`,
//!   covering variance scaling (diagonal `W`) and trace minimization (full
//!   `W`). The weighted projection has an equivalent form that only inverts
//!   an `(m-n) x (m-n)` matrix,
//!
//!   ```text
//!   G = J - J W S_perp (S_perp' W S_perp)^-1 S_perp'
//!   ```
//!
//!   and, when `W` is the raw second-moment matrix `E'E/T` of training
//!   errors against coherent actuals, reduces to a regression of bottom
//!   errors on aggregation defects: `G = J + Psi' S_perp'` with
//!   `Psi = (Z'Z)^-1 Z' E_bot` and `Z = X S_perp` the defect rows of the
//!   base forecasts. Both routes are checked against each other in tests.
//!
//! **Combination regressions** `y_tilde = b' y_hat + c` where `b` is
//! estimated by regressing realized outcomes on *all* base forecasts
//! ([`crate::penreg`]). When the training outcomes are coherent the
//! estimated map lands in the coherent subspace automatically, for the
//! unpenalized, ridge, and group lasso estimators alike, with or without
//! standardization and intercepts. Unlike projections these maps can reduce
//! the loss of every series by moving information across the hierarchy, at
//! the price of needing a training window.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{self, CovEstimator};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::penreg::{self, CoefficientMap, GroupLassoOptions, KktReport, Standardization};

/// Coherency tolerance (relative) demanded of training outcomes.
pub const COHERENT_INPUT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CombPenalty {
    None,
    Ridge,
    GroupLasso,
}

/// A reconciliation method tag, parseable from and printable to the compact
/// form used on the command line (`bu`, `ols`, `wlsv`, `mint:shrink`,
/// `emintu`, `icomb:ridge:xy:c1`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Method {
    BottomUp,
    Ols,
    WlsVar,
    MinTrace {
        estimator: CovEstimator,
    },
    Combination {
        penalty: CombPenalty,
        standardization: Standardization,
        intercept: bool,
    },
}

impl Method {
    /// Convenience constructor for the unpenalized combination regression.
    pub fn unpenalized_combination(intercept: bool) -> Method {
        Method::Combination {
            penalty: CombPenalty::None,
            standardization: Standardization::None,
            intercept,
        }
    }

    /// True when fitting requires a training window of forecasts/actuals.
    pub fn needs_training(&self) -> bool {
        !matches!(self, Method::BottomUp | Method::Ols)
    }

    /// True when fitting requires a tuning parameter chosen elsewhere.
    pub fn needs_tuning(&self) -> bool {
        matches!(
            self,
            Method::Combination {
                penalty: CombPenalty::Ridge | CombPenalty::GroupLasso,
                ..
            }
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::BottomUp => write!(f, "bu"),
            Method::Ols => write!(f, "ols"),
            Method::WlsVar => write!(f, "wlsv"),
            Method::MinTrace { estimator } => match estimator {
                CovEstimator::Sample => write!(f, "mint:sample"),
                CovEstimator::Diagonal => write!(f, "mint:diag"),
                CovEstimator::Shrinkage => write!(f, "mint:shrink"),
            },
            Method::Combination {
                penalty,
                standardization,
                intercept,
            } => {
                if *penalty == CombPenalty::None
                    && *standardization == Standardization::None
                {
                    return write!(f, "emintu{}", if *intercept { ":c1" } else { "" });
                }
                let p = match penalty {
                    CombPenalty::None => "none",
                    CombPenalty::Ridge => "ridge",
                    CombPenalty::GroupLasso => "mlasso",
                };
                let z = match standardization {
                    Standardization::None => "none",
                    Standardization::XOnly => "x",
                    Standardization::XAndY => "xy",
                };
                write!(f, "icomb:{p}:{z}:c{}", u8::from(*intercept))
            }
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        let bad = |msg: &str| Error::InvalidParameter(format!("method {s:?}: {msg}"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts[0] {
            "bu" => Ok(Method::BottomUp),
            "ols" => Ok(Method::Ols),
            "wlsv" => Ok(Method::WlsVar),
            "mint" => {
                let estimator = match parts.get(1) {
                    None | Some(&"shrink") => CovEstimator::Shrinkage,
                    Some(&"sample") => CovEstimator::Sample,
                    Some(&"diag") => CovEstimator::Diagonal,
                    Some(other) => {
                        return Err(bad(&format!("unknown covariance estimator {other:?}")))
                    }
                };
                Ok(Method::MinTrace { estimator })
            }
            "emintu" => {
                let intercept = match parts.get(1) {
                    None | Some(&"c0") => false,
                    Some(&"c1") => true,
                    Some(other) => return Err(bad(&format!("unknown flag {other:?}"))),
                };
                Ok(Method::unpenalized_combination(intercept))
            }
            "icomb" => {
                if parts.len() != 4 {
                    return Err(bad("expected icomb:<penalty>:<standardization>:<c0|c1>"));
                }
                let penalty = match parts[1] {
                    "none" => CombPenalty::None,
                    "ridge" => CombPenalty::Ridge,
                    "mlasso" => CombPenalty::GroupLasso,
                    other => return Err(bad(&format!("unknown penalty {other:?}"))),
                };
                let standardization = match parts[2] {
                    "none" => Standardization::None,
                    "x" => Standardization::XOnly,
                    "xy" => Standardization::XAndY,
                    other => return Err(bad(&format!("unknown standardization {other:?}"))),
                };
                let intercept = match parts[3] {
                    "c0" => false,
                    "c1" => true,
                    other => return Err(bad(&format!("unknown intercept flag {other:?}"))),
                };
                Ok(Method::Combination {
                    penalty,
                    standardization,
                    intercept,
                })
            }
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

/// The fitted map applied to base forecast vectors.
#[derive(Debug, Clone)]
pub enum ReconcilerMap {
    /// `y_tilde = P y_hat`, `P` is `m x m`.
    Projection(DMatrix<f64>),
    /// `y_tilde = b' y_hat + c`.
    Combination(CoefficientMap),
}

#[derive(Debug, Clone)]
pub struct FittedReconciler {
    pub method: Method,
    pub horizon: usize,
    pub map: ReconcilerMap,
    /// Selected penalty when the method was tuned.
    pub tuning: Option<f64>,
    /// First-order optimality report for group lasso fits.
    pub kkt: Option<KktReport>,
}

impl FittedReconciler {
    pub fn apply(&self, base: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.map {
            ReconcilerMap::Projection(p) => {
                if base.len() != p.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "base vector has {} entries, projection expects {}",
                        base.len(),
                        p.ncols()
                    )));
                }
                Ok(p * base)
            }
            ReconcilerMap::Combination(map) => map.predict(base),
        }
    }

    /// Row-wise application to a `T x m` block of base forecasts.
    pub fn apply_rows(&self, base: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.map {
            ReconcilerMap::Projection(p) => {
                if base.ncols() != p.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "base block has {} columns, projection expects {}",
                        base.ncols(),
                        p.ncols()
                    )));
                }
                Ok(base * p.transpose())
            }
            ReconcilerMap::Combination(map) => map.predict_rows(base),
        }
    }
}

fn bottom_rows(h: &Hierarchy, x: &DMatrix<f64>) -> DMatrix<f64> {
    x.rows(h.aggregate_count(), h.n()).into_owned()
}

/// `S J`: keep the bottom forecasts, rebuild every aggregate from them.
pub fn bottom_up_projection(h: &Hierarchy) -> DMatrix<f64> {
    let m = h.m();
    let n = h.n();
    let mut g = DMatrix::zeros(n, m);
    g.view_mut((0, h.aggregate_count()), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    h.summing_matrix() * g
}

/// Orthogonal projection onto the coherent subspace, `S (S'S)^-1 S'`.
pub fn ols_projection(h: &Hierarchy) -> Result<DMatrix<f64>> {
    let s = h.summing_matrix();
    let gram = s.tr_mul(s);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("S'S is singular".into()))?;
    Ok(s * chol.solve(&s.transpose()))
}

/// Weighted projection `S (S' W^-1 S)^-1 S' W^-1`; `w` must be symmetric
/// positive definite.
pub fn weighted_projection(h: &Hierarchy, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = h.m();
    if w.nrows() != m || w.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix is {}x{}, hierarchy has {} series",
            w.nrows(),
            w.ncols(),
            m
        )));
    }
    let asym = (w - w.transpose()).amax();
    let scale = w.amax().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite("weight matrix is not symmetric".into()));
    }
    let chol_w = w
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("weight matrix".into()))?;
    let s = h.summing_matrix();
    let winv_s = chol_w.solve(s);
    let a = s.tr_mul(&winv_s);
    let chol_a = a
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("S' W^-1 S is singular".into()))?;
    Ok(s * chol_a.solve(&winv_s.transpose()))
}

/// The weighted projection's combination weights computed through the
/// complement basis: only an `(m-n) x (m-n)` system is solved. Returns the
/// `n x m` matrix `G`; the projection is `S G`.
pub fn weighted_g_via_complement(h: &Hierarchy, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = h.m();
    if w.nrows() != m || w.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix is {}x{}, hierarchy has {} series",
            w.nrows(),
            w.ncols(),
            m
        )));
    }
    let s_perp = h.null_space_basis();
    let ws_perp = w * s_perp;
    let mid = s_perp.tr_mul(&ws_perp);
    let chol = mid.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("S_perp' W S_perp (is W positive definite?)".into())
    })?;
    let right = chol.solve(&s_perp.transpose());
    // J picks bottom rows; J W S_perp is the bottom block of W S_perp.
    let correction = bottom_rows(h, &ws_perp) * right;
    let mut g = DMatrix::zeros(h.n(), m);
    g.view_mut((0, h.aggregate_count()), (h.n(), h.n()))
        .copy_from(&DMatrix::identity(h.n(), h.n()));
    g -= correction;
    Ok(g)
}

/// Weighted reconciliation estimated directly from a training window,
/// bypassing the `m x m` covariance: regress bottom-series errors on the
/// aggregation defects of the base forecasts.
#[derive(Debug, Clone)]
pub struct DefectRegression {
    /// `(m-n) x n`: how strongly each bottom correction responds to each
    /// aggregation defect.
    pub psi: DMatrix<f64>,
    /// `G = J + Psi' S_perp'`, `n x m`.
    pub g: DMatrix<f64>,
    /// `S G`, `m x m`.
    pub projection: DMatrix<f64>,
}

/// Fits the defect regression from base forecasts `x` and coherent actuals
/// `y` (both `T x m`). Equals the weighted projection under the raw
/// second-moment matrix of the training errors.
pub fn defect_regression(
    h: &Hierarchy,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<DefectRegression> {
    if x.nrows() != y.nrows() || x.ncols() != h.m() || y.ncols() != h.m() {
        return Err(Error::DimensionMismatch(format!(
            "forecasts {}x{}, actuals {}x{}, hierarchy m = {}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            h.m()
        )));
    }
    if h.max_relative_residual(y)? > COHERENT_INPUT_TOL {
        return Err(Error::InvalidParameter(
            "training actuals are not coherent".into(),
        ));
    }
    let z = x * h.null_space_basis();
    // Coherent base forecasts leave only rounding noise in the defects and
    // the regression below would divide by it.
    let x_scale = x.amax().max(1.0);
    if z.amax() <= 1e-10 * x_scale {
        return Err(Error::SingularSystem(
            "base forecasts are already coherent; no aggregation defects to regress on".into(),
        ));
    }
    let errors = y - x;
    let e_bot = errors.columns(h.aggregate_count(), h.n()).into_owned();
    let gram = z.tr_mul(&z);
    let chol = gram.cholesky().ok_or_else(|| {
        Error::SingularSystem(
            "defect matrix Z'Z is singular (are the base forecasts already coherent?)".into(),
        )
    })?;
    let psi = chol.solve(&z.tr_mul(&e_bot));
    let mut g = DMatrix::zeros(h.n(), h.m());
    g.view_mut((0, h.aggregate_count()), (h.n(), h.n()))
        .copy_from(&DMatrix::identity(h.n(), h.n()));
    g += psi.transpose() * h.null_space_basis().transpose();
    let projection = h.summing_matrix() * &g;
    Ok(DefectRegression { psi, g, projection })
}

/// Solver knobs threaded through to the group lasso.
#[derive(Debug, Clone, Copy, Default)]
pub struct CombinationOptions {
    pub lasso: GroupLassoOptions,
}

/// Fits a combination-regression reconciler: outcomes `y` (coherent, `T x m`)
/// regressed on base forecasts `x` (`T x m`), with the requested penalty,
/// standardization, and intercept. `param` is the ridge or lasso penalty
/// level; it is ignored (and may be `None`) for the unpenalized fit.
pub fn fit_combination(
    h: &Hierarchy,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    penalty: CombPenalty,
    standardization: Standardization,
    intercept: bool,
    param: Option<f64>,
    opts: &CombinationOptions,
) -> Result<(CoefficientMap, Option<KktReport>)> {
    if x.nrows() != y.nrows() || x.ncols() != h.m() || y.ncols() != h.m() {
        return Err(Error::DimensionMismatch(format!(
            "forecasts {}x{}, actuals {}x{}, hierarchy m = {}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            h.m()
        )));
    }
    if h.max_relative_residual(y)? > COHERENT_INPUT_TOL {
        return Err(Error::InvalidParameter(
            "training actuals are not coherent".into(),
        ));
    }
    let std = penreg::standardize(x, y, standardization)?;
    let need_param = || {
        param.ok_or_else(|| {
            Error::InvalidParameter("penalized combination fit needs a tuning parameter".into())
        })
    };
    let (scaled_map, kkt) = match penalty {
        CombPenalty::None => (penreg::fit_ols(&std.x, &std.y, intercept)?, None),
        CombPenalty::Ridge => (
            penreg::fit_ridge(
                &std.x,
                &std.y,
                need_param()?,
                penreg::RidgeShape::GramDiagonal,
                intercept,
            )?,
            None,
        ),
        CombPenalty::GroupLasso => {
            let fit = penreg::fit_mlasso(&std.x, &std.y, need_param()?, intercept, &opts.lasso)?;
            (fit.map, Some(fit.kkt))
        }
    };
    let map = penreg::destandardize(&scaled_map, standardization, &std.x_scale, &std.y_scale)?;
    Ok((map, kkt))
}

/// Fits any method tag. `training` supplies the `(base forecasts, actuals)`
/// window for the data-driven methods and is ignored by `bu`/`ols`;
/// `tuning` supplies the selected penalty for penalized combinations.
pub fn fit_method(
    h: &Hierarchy,
    method: Method,
    training: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    tuning: Option<f64>,
    horizon: usize,
    opts: &CombinationOptions,
) -> Result<FittedReconciler> {
    let need_training = || {
        training.ok_or_else(|| {
            Error::InsufficientData(format!("method {method} needs a training window"))
        })
    };
    let (map, kkt) = match method {
        Method::BottomUp => (ReconcilerMap::Projection(bottom_up_projection(h)), None),
        Method::Ols => (ReconcilerMap::Projection(ols_projection(h)?), None),
        Method::WlsVar => {
            let (x, y) = need_training()?;
            let errors = y - x;
            let cov = covariance::diagonal_cov(&errors, horizon)?;
            (
                ReconcilerMap::Projection(weighted_projection(h, &cov.w)?),
                None,
            )
        }
        Method::MinTrace { estimator } => {
            let (x, y) = need_training()?;
            let errors = y - x;
            let cov = covariance::estimate(&errors, horizon, estimator)?;
            (
                ReconcilerMap::Projection(weighted_projection(h, &cov.w)?),
                None,
            )
        }
        Method::Combination {
            penalty,
            standardization,
            intercept,
        } => {
            let (x, y) = need_training()?;
            let (map, kkt) =
                fit_combination(h, x, y, penalty, standardization, intercept, tuning, opts)?;
            (ReconcilerMap::Combination(map), kkt)
        }
    };
    Ok(FittedReconciler {
        method,
        horizon,
        map,
        tuning: if method.needs_tuning() { tuning } else { None },
        kkt,
    })
}
