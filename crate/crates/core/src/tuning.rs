//! Penalty selection for combination reconciliation.
//!
//! The search space is a 200-point log-spaced grid anchored at the largest
//! penalty that matters: for the group lasso that is the smallest value at
//! which every coefficient group is zero, and the ridge grid reuses the
//! same anchor so both penalties share one selection procedure. The lower
//! end scales the anchor down to the `[0.01, 0.1)` decade, so grids for
//! anchors `0.05, 0.5, 5, 50, 500` all stop at exactly `0.05`.
//!
//! Selection is rolling-origin cross-validation: the last part of the
//! sample is held out one time point at a time, the combination map is
//! refit on everything strictly before the held-out point, and the
//! penalty minimizing the summed squared reconciled forecast error across
//! all series wins. Ties go to the stronger penalty. Window fits along the
//! descending grid are warm-started from the previous penalty's solution;
//! windows are independent of each other and run in parallel, with losses
//! reduced in window order so the curve is identical under any thread
//! count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::penreg::{self, CoefficientMap, GroupLassoOptions, RidgeShape, Standardization};
use crate::reconcile::CombPenalty;

/// Number of grid points used by the standard grid.
pub const GRID_POINTS: usize = 200;

/// Lower grid endpoint for a given anchor: the anchor's mantissa scaled
/// into the `[0.01, 0.1)` decade. Decade powers are computed as exact
/// integer powers of ten so round anchors give round endpoints.
pub fn tau_min_rule(tau_max: f64) -> f64 {
    let decade = tau_max.log10().floor() as i32;
    let pow = 10.0_f64.powi(decade.abs());
    let mantissa = if decade >= 0 {
        tau_max / pow
    } else {
        tau_max * pow
    };
    0.01 * mantissa
}

/// A descending penalty grid.
#[derive(Debug, Clone, Serialize)]
pub struct TuningGrid {
    values: Vec<f64>,
}

impl TuningGrid {
    /// `points` log-spaced values from `tau_max` down to `tau_min`, both
    /// endpoints exact. `tau_min == tau_max` yields a constant grid.
    pub fn log_spaced(tau_max: f64, tau_min: f64, points: usize) -> Result<TuningGrid> {
        if !(tau_max.is_finite() && tau_min.is_finite()) || tau_min <= 0.0 || tau_max < tau_min {
            return Err(Error::InvalidParameter(format!(
                "penalty grid needs 0 < tau_min <= tau_max, got [{tau_min}, {tau_max}]"
            )));
        }
        if points < 2 {
            return Err(Error::InvalidParameter(
                "penalty grid needs at least 2 points".into(),
            ));
        }
        let ratio = tau_min / tau_max;
        let mut values: Vec<f64> = (0..points)
            .map(|i| tau_max * ratio.powf(i as f64 / (points - 1) as f64))
            .collect();
        values[0] = tau_max;
        values[points - 1] = tau_min;
        Ok(TuningGrid { values })
    }

    /// The standard grid: [`GRID_POINTS`] values from `tau_max` down to
    /// [`tau_min_rule`]`(tau_max)`.
    pub fn standard(tau_max: f64) -> Result<TuningGrid> {
        TuningGrid::log_spaced(tau_max, tau_min_rule(tau_max), GRID_POINTS)
    }

    /// The standard grid anchored at the data's critical penalty (the
    /// smallest value that zeroes every group-lasso coefficient).
    pub fn from_data(x: &DMatrix<f64>, y: &DMatrix<f64>, intercept: bool) -> Result<TuningGrid> {
        let anchor = penreg::lambda_max(x, y, intercept)?;
        if anchor <= 0.0 || !anchor.is_finite() {
            return Err(Error::ZeroVariance(
                "targets are uncorrelated with every predictor; no penalty grid exists".into(),
            ));
        }
        TuningGrid::standard(anchor)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Shape of the rolling-origin validation pass.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CvPlan {
    /// How many trailing time points to hold out, at most.
    pub validation_len: usize,
    /// Distance between consecutive held-out points.
    pub step: usize,
    /// Refit cadence: maps are refit at every `refit_every`-th window and
    /// reused in between. `1` refits for every held-out point.
    pub refit_every: usize,
    /// Smallest training set the first window may fit on; the holdout
    /// shrinks to preserve it.
    pub min_train: usize,
}

impl Default for CvPlan {
    fn default() -> CvPlan {
        CvPlan {
            validation_len: 40,
            step: 1,
            refit_every: 1,
            min_train: 10,
        }
    }
}

/// Outcome of a cross-validation run.
#[derive(Debug, Clone, Serialize)]
pub struct TuningResult {
    /// The grid that was searched, descending.
    pub grid: Vec<f64>,
    /// Summed validation loss per grid value (same order as `grid`).
    pub cv_curve: Vec<f64>,
    /// Index of the winner in `grid`.
    pub selected_index: usize,
    /// The winning penalty.
    pub selected: f64,
    /// Number of held-out points scored.
    pub windows: usize,
}

fn fit_window(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    penalty: CombPenalty,
    standardization: Standardization,
    intercept: bool,
    grid: &[f64],
    opts: &GroupLassoOptions,
) -> Result<Vec<CoefficientMap>> {
    let std = penreg::standardize(x, y, standardization)?;
    let mut maps = Vec::with_capacity(grid.len());
    let mut warm: Option<DMatrix<f64>> = None;
    for &value in grid {
        let scaled_map = match penalty {
            CombPenalty::None => {
                return Err(Error::InvalidParameter(
                    "unpenalized combination has no tuning parameter".into(),
                ))
            }
            CombPenalty::Ridge => {
                penreg::fit_ridge(&std.x, &std.y, value, RidgeShape::GramDiagonal, intercept)?
            }
            CombPenalty::GroupLasso => {
                let fit = penreg::fit_mlasso_from(
                    &std.x,
                    &std.y,
                    value,
                    intercept,
                    warm.as_ref(),
                    opts,
                )?;
                warm = Some(fit.map.b.clone());
                fit.map
            }
        };
        maps.push(penreg::destandardize(
            &scaled_map,
            standardization,
            &std.x_scale,
            &std.y_scale,
        )?);
    }
    Ok(maps)
}

/// Scores every grid value by rolling-origin validation over chronological
/// `(x, y)` rows and returns the winner. Rows strictly before each held-out
/// row form its training set, so no fit ever sees its own target.
#[allow(clippy::too_many_arguments)]
pub fn rolling_cv(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    penalty: CombPenalty,
    standardization: Standardization,
    intercept: bool,
    grid: &TuningGrid,
    plan: &CvPlan,
    opts: &GroupLassoOptions,
) -> Result<TuningResult> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictor rows, {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if matches!(penalty, CombPenalty::None) {
        return Err(Error::InvalidParameter(
            "unpenalized combination has no tuning parameter".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::EmptyInput("penalty grid is empty".into()));
    }
    if plan.step == 0 || plan.refit_every == 0 {
        return Err(Error::InvalidParameter(
            "cross-validation step and refit cadence must be positive".into(),
        ));
    }
    let t = x.nrows();
    if t <= plan.min_train {
        return Err(Error::InsufficientData(format!(
            "{t} rows cannot hold out anything past a minimum training set of {}",
            plan.min_train
        )));
    }
    let holdout = plan.validation_len.min(t - plan.min_train);
    if holdout == 0 {
        return Err(Error::InsufficientData(
            "validation length is zero".into(),
        ));
    }
    let start = t - holdout;
    let held_out: Vec<usize> = (start..t).step_by(plan.step).collect();

    // Windows sharing one refit form a chunk; chunks are independent.
    let chunks: Vec<&[usize]> = held_out.chunks(plan.refit_every).collect();
    let chunk_losses: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|rows| {
            let fit_at = rows[0];
            let maps = fit_window(
                &x.rows(0, fit_at).into_owned(),
                &y.rows(0, fit_at).into_owned(),
                penalty,
                standardization,
                intercept,
                grid.values(),
                opts,
            )?;
            let mut losses = vec![0.0; maps.len()];
            for &row in *rows {
                let xv = x.row(row).transpose();
                for (loss, map) in losses.iter_mut().zip(&maps) {
                    let pred = map.predict(&xv)?;
                    let err = y.row(row).transpose() - pred;
                    *loss += err.norm_squared();
                }
            }
            Ok(losses)
        })
        .collect();

    let mut cv_curve = vec![0.0; grid.len()];
    for losses in chunk_losses {
        for (total, loss) in cv_curve.iter_mut().zip(losses?) {
            *total += loss;
        }
    }

    // Strict improvement moves the winner, so ties keep the earlier entry:
    // the larger penalty.
    let mut selected_index = 0;
    for (i, &loss) in cv_curve.iter().enumerate() {
        if loss < cv_curve[selected_index] {
            selected_index = i;
        }
    }
    Ok(TuningResult {
        grid: grid.values().to_vec(),
        cv_curve,
        selected_index,
        selected: grid.values()[selected_index],
        windows: held_out.len(),
    })
}

/// One-call selection with the standard data-anchored grid and default
/// plan.
pub fn select_penalty(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    penalty: CombPenalty,
    standardization: Standardization,
    intercept: bool,
    opts: &GroupLassoOptions,
) -> Result<TuningResult> {
    let grid = TuningGrid::from_data(x, y, intercept)?;
    rolling_cv(
        x,
        y,
        penalty,
        standardization,
        intercept,
        &grid,
        &CvPlan::default(),
        opts,
    )
}
