//! Multivariate regression of realized outcomes on base forecasts.
//!
//! All fits share the layout: `x` is `T x k` (one row per training instant,
//! one column per predictor series), `y` is `T x m` (outcomes for every
//! series in the collection), and the coefficient matrix `b` is `k x m` so a
//! prediction for a new row `x_new` is `b' x_new`.
//!
//! Three estimators are provided.
//!
//! - Least squares via singular value decomposition with a relative cutoff,
//!   which keeps working (minimum-norm solution) when `x' x` is singular.
//! - Ridge: `b = (x'x + nu * L)^-1 x'y` with `L` either the identity or
//!   `diag(x'x)`; the latter makes the penalty indifferent to column scale.
//! - Multivariate group lasso: one group per predictor row of `b`,
//!
//!   ```text
//!   min over b of  1/(2T) * ||y - x b||_F^2  +  lambda * sum_j ||b_j.||_2
//!   ```
//!
//!   solved by block coordinate descent. Shrinking whole rows means a
//!   predictor is either used by every series or dropped by all of them.
//!
//! Intercepts are handled by centering the columns of `x` and `y` and
//! back-solving the constant, never by appending a column of ones, so the
//! penalties never see the intercept. Standardization (dividing columns by
//! their sample standard deviation) is a separate explicit step; fits record
//! the scales that were applied so coefficients can be mapped back to raw
//! units.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative singular-value cutoff for the least squares fallback path.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-10;

/// Entries of a coefficient row below this count as zero when deciding
/// whether a predictor group is active.
pub const ACTIVE_GROUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Standardization {
    None,
    XOnly,
    XAndY,
}

impl Standardization {
    pub fn scales_x(self) -> bool {
        !matches!(self, Standardization::None)
    }

    pub fn scales_y(self) -> bool {
        matches!(self, Standardization::XAndY)
    }
}

/// Shape of the ridge penalty matrix `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeShape {
    Identity,
    /// `L = diag(x'x)`, so each coefficient is penalized proportionally to
    /// the energy of its predictor column.
    GramDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Penalty {
    None,
    Ridge { nu: f64 },
    GroupLasso { lambda: f64 },
}

/// A fitted linear map from predictor space to outcome space.
#[derive(Debug, Clone)]
pub struct CoefficientMap {
    /// `k x m`; row `j` holds the contribution of predictor `j` to every
    /// outcome series.
    pub b: DMatrix<f64>,
    pub intercept: Option<DVector<f64>>,
    pub penalty: Penalty,
    pub standardization: Standardization,
    /// Scales divided out of `x` columns before fitting (ones when the mode
    /// does not touch `x`).
    pub x_scale: Option<DVector<f64>>,
    pub y_scale: Option<DVector<f64>>,
}

impl CoefficientMap {
    /// Prediction `b' x + intercept` for one predictor vector in raw units.
    pub fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.b.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "predictor vector has {} entries, map expects {}",
                x.len(),
                self.b.nrows()
            )));
        }
        let mut out = self.b.tr_mul(x);
        if let Some(c) = &self.intercept {
            out += c;
        }
        Ok(out)
    }

    /// Row-wise predictions for a `T x k` block.
    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.b.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "predictor block has {} columns, map expects {}",
                x.ncols(),
                self.b.nrows()
            )));
        }
        let mut out = x * &self.b;
        if let Some(c) = &self.intercept {
            for mut row in out.row_iter_mut() {
                row += c.transpose();
            }
        }
        Ok(out)
    }

    /// Number of predictor rows with at least one non-negligible entry.
    pub fn active_groups(&self) -> usize {
        (0..self.b.nrows())
            .filter(|&j| self.b.row(j).iter().any(|v| v.abs() > ACTIVE_GROUP_TOL))
            .count()
    }
}

fn check_training_shapes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyInput("predictor block is empty".into()));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictor rows, {} outcome rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if y.ncols() == 0 {
        return Err(Error::EmptyInput("outcome block is empty".into()));
    }
    Ok(())
}

fn column_means(m: &DMatrix<f64>) -> RowDVector<f64> {
    RowDVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

fn center_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, RowDVector<f64>) {
    let means = column_means(m);
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    (centered, means)
}

/// Centers `x` and `y` when an intercept is requested; identity otherwise.
fn prepare(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    intercept: bool,
) -> (DMatrix<f64>, DMatrix<f64>, Option<(RowDVector<f64>, RowDVector<f64>)>) {
    if intercept {
        let (xc, xm) = center_columns(x);
        let (yc, ym) = center_columns(y);
        (xc, yc, Some((xm, ym)))
    } else {
        (x.clone(), y.clone(), None)
    }
}

fn intercept_from_means(
    b: &DMatrix<f64>,
    means: &Option<(RowDVector<f64>, RowDVector<f64>)>,
) -> Option<DVector<f64>> {
    means
        .as_ref()
        .map(|(xm, ym)| ym.transpose() - b.tr_mul(&xm.transpose()))
}

/// Least squares through a singular value decomposition; singular values
/// below [`SVD_RELATIVE_CUTOFF`] times the largest are treated as zero, so
/// rank-deficient designs yield the minimum-norm solution.
pub fn fit_ols(x: &DMatrix<f64>, y: &DMatrix<f64>, intercept: bool) -> Result<CoefficientMap> {
    check_training_shapes(x, y)?;
    let (xc, yc, means) = prepare(x, y, intercept);
    let svd = xc.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = if sigma_max > 0.0 {
        SVD_RELATIVE_CUTOFF * sigma_max
    } else {
        // All-zero design: every pseudo-inverse coefficient is zero.
        f64::MIN_POSITIVE
    };
    let b = svd
        .solve(&yc, eps)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    let intercept_vec = intercept_from_means(&b, &means);
    Ok(CoefficientMap {
        b,
        intercept: intercept_vec,
        penalty: Penalty::None,
        standardization: Standardization::None,
        x_scale: None,
        y_scale: None,
    })
}

/// Ridge fit `b = (x'x + nu L)^-1 x'y`.
///
/// `nu = 0` demands an invertible `x'x`; callers that cannot guarantee full
/// rank should use [`fit_ols`], which handles the singular case.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    nu: f64,
    shape: RidgeShape,
    intercept: bool,
) -> Result<CoefficientMap> {
    check_training_shapes(x, y)?;
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ridge penalty must be finite and non-negative, got {nu}"
        )));
    }
    let (xc, yc, means) = prepare(x, y, intercept);
    let mut gram = xc.tr_mul(&xc);
    match shape {
        RidgeShape::Identity => {
            for i in 0..gram.nrows() {
                gram[(i, i)] += nu;
            }
        }
        RidgeShape::GramDiagonal => {
            for i in 0..gram.nrows() {
                gram[(i, i)] *= 1.0 + nu;
            }
        }
    }
    let rhs = xc.tr_mul(&yc);
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::SingularSystem(if nu == 0.0 {
            "x'x is singular at nu = 0; use the unpenalized least squares fit".into()
        } else {
            "x'x + nu L is singular (zero predictor column under the gram-diagonal penalty)"
                .into()
        })
    })?;
    let b = chol.solve(&rhs);
    let intercept_vec = intercept_from_means(&b, &means);
    Ok(CoefficientMap {
        b,
        intercept: intercept_vec,
        penalty: Penalty::Ridge { nu },
        standardization: Standardization::None,
        x_scale: None,
        y_scale: None,
    })
}

/// Smallest penalty at which the group lasso solution is identically zero:
/// `max_j ||x_j' y / T||_2`, with columns centered first when an intercept
/// will be fitted.
pub fn lambda_max(x: &DMatrix<f64>, y: &DMatrix<f64>, intercept: bool) -> Result<f64> {
    check_training_shapes(x, y)?;
    let (xc, yc, _) = prepare(x, y, intercept);
    let t = xc.nrows() as f64;
    let mut best = 0.0_f64;
    for j in 0..xc.ncols() {
        let cj = yc.tr_mul(&xc.column(j).into_owned()) / t;
        best = best.max(cj.norm());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy)]
pub struct GroupLassoOptions {
    /// Stop when no coefficient moves more than this in one sweep.
    pub tol: f64,
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
    /// Record the objective after every sweep (costs one extra residual
    /// norm per sweep; used by convergence diagnostics and tests).
    pub track_objective: bool,
}

impl Default for GroupLassoOptions {
    fn default() -> Self {
        GroupLassoOptions {
            tol: 1e-7,
            max_iter: 10_000,
            track_objective: false,
        }
    }
}

/// First-order optimality report for a group lasso solution.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Largest norm of the stationarity residual over active groups.
    pub max_active_residual: f64,
    /// Largest amount by which an inactive group's score `||x_j' r / T||`
    /// exceeds `lambda` (zero when none does).
    pub max_inactive_excess: f64,
    pub lambda: f64,
    pub tol: f64,
    pub satisfied: bool,
}

/// Verifies the subgradient conditions at `b`: active groups must satisfy
/// `x_j'(y - x b)/T = lambda * b_j / ||b_j||` up to `10 * tol`, inactive
/// groups must have score at most `lambda * (1 + 10 * tol)`.
pub fn kkt_check(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b: &DMatrix<f64>,
    intercept: bool,
    lambda: f64,
    tol: f64,
) -> Result<KktReport> {
    check_training_shapes(x, y)?;
    let (xc, yc, _) = prepare(x, y, intercept);
    if b.nrows() != xc.ncols() || b.ncols() != yc.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrix is {}x{}, expected {}x{}",
            b.nrows(),
            b.ncols(),
            xc.ncols(),
            yc.ncols()
        )));
    }
    let t = xc.nrows() as f64;
    let residual = &yc - &xc * b;
    let mut max_active = 0.0_f64;
    let mut max_excess = 0.0_f64;
    for j in 0..xc.ncols() {
        let score = residual.tr_mul(&xc.column(j).into_owned()) / t;
        let beta = b.row(j).transpose();
        let norm = beta.norm();
        if norm > ACTIVE_GROUP_TOL {
            let stationarity = &score - &beta * (lambda / norm);
            max_active = max_active.max(stationarity.norm());
        } else {
            max_excess = max_excess.max(score.norm() - lambda);
        }
    }
    let slack = 10.0 * tol;
    Ok(KktReport {
        max_active_residual: max_active,
        max_inactive_excess: max_excess.max(0.0),
        lambda,
        tol,
        satisfied: max_active <= slack && max_excess <= lambda * slack,
    })
}

#[derive(Debug, Clone)]
pub struct GroupLassoFit {
    pub map: CoefficientMap,
    pub sweeps: usize,
    /// Objective after each sweep when tracking was requested.
    pub objective: Vec<f64>,
    pub kkt: KktReport,
}

/// Group lasso objective in the solver's coordinates.
pub fn group_lasso_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b: &DMatrix<f64>,
    intercept: bool,
    lambda: f64,
) -> f64 {
    let (xc, yc, _) = prepare(x, y, intercept);
    let residual = &yc - &xc * b;
    let t = xc.nrows() as f64;
    let penalty: f64 = (0..b.nrows()).map(|j| b.row(j).norm()).sum();
    residual.norm_squared() / (2.0 * t) + lambda * penalty
}

/// Block coordinate descent for the multivariate group lasso, starting from
/// the zero matrix.
pub fn fit_mlasso(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    intercept: bool,
    opts: &GroupLassoOptions,
) -> Result<GroupLassoFit> {
    fit_mlasso_from(x, y, lambda, intercept, None, opts)
}

/// As [`fit_mlasso`] but optionally warm-started from a previous solution,
/// which makes sweeping a descending penalty grid cheap.
pub fn fit_mlasso_from(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    intercept: bool,
    warm: Option<&DMatrix<f64>>,
    opts: &GroupLassoOptions,
) -> Result<GroupLassoFit> {
    check_training_shapes(x, y)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "group lasso penalty must be finite and non-negative, got {lambda}"
        )));
    }
    if opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "group lasso options need tol > 0 and max_iter > 0".into(),
        ));
    }
    let (xc, yc, means) = prepare(x, y, intercept);
    let t = xc.nrows() as f64;
    let k = xc.ncols();
    let m = yc.ncols();

    let columns: Vec<DVector<f64>> = (0..k).map(|j| xc.column(j).into_owned()).collect();
    // s_j = ||x_j||^2 / T; zero-energy columns can never activate.
    let energy: Vec<f64> = columns.iter().map(|c| c.norm_squared() / t).collect();

    let mut b = match warm {
        Some(w) => {
            if w.nrows() != k || w.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "warm start is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    k,
                    m
                )));
            }
            w.clone()
        }
        None => DMatrix::zeros(k, m),
    };
    let mut residual = &yc - &xc * &b;
    let mut objective = Vec::new();
    let mut last_change = f64::INFINITY;

    for sweep in 1..=opts.max_iter {
        let mut max_change = 0.0_f64;
        for j in 0..k {
            if energy[j] == 0.0 {
                continue;
            }
            let beta_old = b.row(j).transpose();
            // c_j = x_j' (residual + x_j beta_old') / T, the score of the
            // partial residual that excludes group j.
            let mut cj = residual.tr_mul(&columns[j]) / t;
            cj.axpy(energy[j], &beta_old, 1.0);
            let norm = cj.norm();
            let shrink = if norm > 0.0 {
                (1.0 - lambda / norm).max(0.0)
            } else {
                0.0
            };
            let beta_new = cj * (shrink / energy[j]);
            let delta = &beta_new - &beta_old;
            let delta_max = delta.amax();
            if delta_max > 0.0 {
                // residual -= x_j * delta'
                for (col, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        residual.column_mut(col).axpy(-*d, &columns[j], 1.0);
                    }
                }
                b.row_mut(j).copy_from(&beta_new.transpose());
                max_change = max_change.max(delta_max);
            }
        }
        if opts.track_objective {
            let penalty: f64 = (0..k).map(|j| b.row(j).norm()).sum();
            objective.push(residual.norm_squared() / (2.0 * t) + lambda * penalty);
        }
        last_change = max_change;
        if max_change <= opts.tol {
            // The change criterion can trigger while the gradient is still
            // settling; only stop once first-order optimality certifies.
            let kkt = kkt_check(x, y, &b, intercept, lambda, opts.tol)?;
            if !kkt.satisfied {
                continue;
            }
            let intercept_vec = intercept_from_means(&b, &means);
            return Ok(GroupLassoFit {
                map: CoefficientMap {
                    b,
                    intercept: intercept_vec,
                    penalty: Penalty::GroupLasso { lambda },
                    standardization: Standardization::None,
                    x_scale: None,
                    y_scale: None,
                },
                sweeps: sweep,
                objective,
                kkt,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_change,
        tolerance: opts.tol,
    })
}

/// Column scales (`x`) and (`y`) implied by a standardization mode, plus the
/// scaled copies. Scales are sample standard deviations; a mode only ever
/// divides by them, so zero variance under an active mode is an error.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub x_scale: DVector<f64>,
    pub y_scale: DVector<f64>,
}

fn sample_std(column: nalgebra::DVectorView<f64>) -> f64 {
    let t = column.len();
    if t < 2 {
        return 0.0;
    }
    let mean = column.mean();
    let ss: f64 = column.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (t as f64 - 1.0)).sqrt()
}

fn scale_columns(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut scaled = m.clone();
    let mut scales = DVector::from_element(m.ncols(), 1.0);
    for j in 0..m.ncols() {
        let s = sample_std(m.column(j));
        if s == 0.0 {
            return Err(Error::ZeroVariance(format!(
                "{what} column {j} is constant but the active standardization mode scales it"
            )));
        }
        scales[j] = s;
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    Ok((scaled, scales))
}

/// Applies a standardization mode to training blocks.
pub fn standardize(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mode: Standardization,
) -> Result<Standardized> {
    check_training_shapes(x, y)?;
    let (xs, x_scale) = if mode.scales_x() {
        scale_columns(x, "x")?
    } else {
        (x.clone(), DVector::from_element(x.ncols(), 1.0))
    };
    let (ys, y_scale) = if mode.scales_y() {
        scale_columns(y, "y")?
    } else {
        (y.clone(), DVector::from_element(y.ncols(), 1.0))
    };
    Ok(Standardized {
        x: xs,
        y: ys,
        x_scale,
        y_scale,
    })
}

/// Maps coefficients fitted in standardized units back to raw units:
/// `b_ij = b*_ij * y_scale_j / x_scale_i`, intercepts scale by `y_scale`.
pub fn destandardize(
    map: &CoefficientMap,
    mode: Standardization,
    x_scale: &DVector<f64>,
    y_scale: &DVector<f64>,
) -> Result<CoefficientMap> {
    if map.b.nrows() != x_scale.len() || map.b.ncols() != y_scale.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{} but scales have lengths {} and {}",
            map.b.nrows(),
            map.b.ncols(),
            x_scale.len(),
            y_scale.len()
        )));
    }
    let mut b = map.b.clone();
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            b[(i, j)] *= y_scale[j] / x_scale[i];
        }
    }
    let intercept = map
        .intercept
        .as_ref()
        .map(|c| DVector::from_fn(c.len(), |j, _| c[j] * y_scale[j]));
    Ok(CoefficientMap {
        b,
        intercept,
        penalty: map.penalty,
        standardization: mode,
        x_scale: Some(x_scale.clone()),
        y_scale: Some(y_scale.clone()),
    })
}
