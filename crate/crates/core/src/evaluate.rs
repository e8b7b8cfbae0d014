//! Rolling-origin evaluation of reconciliation methods on recorded
//! forecasts.
//!
//! The input is a cube of base forecasts indexed by forecast origin,
//! horizon, and node, plus the panel of actuals. Every method is refit for
//! each origin using only forecast/actual pairs whose target precedes that
//! origin, so the evaluation never lets a fit see its own future. Accuracy
//! is summarized as per-node mean squared forecast error and as its
//! percentage change against the unreconciled base forecasts (negative
//! values mean the method helped).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::panel::{compare_time_labels, PanelMatrix};
use crate::penreg::GroupLassoOptions;
use crate::reconcile::{self, CombinationOptions, Method, ReconcilerMap};
use crate::tuning::{self, CvPlan, TuningGrid};

/// One base forecast: made at `origin` for the time `horizon` steps later.
#[derive(Debug, Clone, Serialize)]
pub struct ForecastRecord {
    pub origin: String,
    pub horizon: usize,
    pub node: String,
    pub value: f64,
}

/// A complete forecast cube: every origin, horizon, and node combination
/// holds exactly one value.
#[derive(Debug, Clone)]
pub struct ForecastTensor {
    origins: Vec<String>,
    horizons: Vec<usize>,
    nodes: Vec<String>,
    /// Row-major over (origin, horizon, node).
    values: Vec<f64>,
}

impl ForecastTensor {
    /// Builds the cube from records in any order.
    pub fn from_records(records: &[ForecastRecord]) -> Result<ForecastTensor> {
        if records.is_empty() {
            return Err(Error::EmptyInput("no forecast records".into()));
        }
        let mut origins: Vec<String> = Vec::new();
        let mut horizons: Vec<usize> = Vec::new();
        let mut nodes: Vec<String> = Vec::new();
        for r in records {
            if !r.value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "forecast for node {:?} at origin {:?} horizon {} is not finite",
                    r.node, r.origin, r.horizon
                )));
            }
            if r.horizon == 0 {
                return Err(Error::InvalidParameter(format!(
                    "forecast horizons start at 1, got 0 at origin {:?}",
                    r.origin
                )));
            }
            if !origins.contains(&r.origin) {
                origins.push(r.origin.clone());
            }
            if !horizons.contains(&r.horizon) {
                horizons.push(r.horizon);
            }
            if !nodes.contains(&r.node) {
                nodes.push(r.node.clone());
            }
        }
        origins.sort_by(|a, b| compare_time_labels(a, b));
        horizons.sort_unstable();
        nodes.sort();

        let o_index: HashMap<&str, usize> = origins
            .iter()
            .enumerate()
            .map(|(i, o)| (o.as_str(), i))
            .collect();
        let n_index: HashMap<&str, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();

        let cells = origins.len() * horizons.len() * nodes.len();
        let mut values = vec![f64::NAN; cells];
        let mut seen = vec![false; cells];
        for r in records {
            let o = o_index[r.origin.as_str()];
            let h = horizons.binary_search(&r.horizon).expect("horizon recorded");
            let n = n_index[r.node.as_str()];
            let idx = (o * horizons.len() + h) * nodes.len() + n;
            if seen[idx] {
                return Err(Error::InvalidParameter(format!(
                    "duplicate forecast for node {:?} at origin {:?} horizon {}",
                    r.node, r.origin, r.horizon
                )));
            }
            seen[idx] = true;
            values[idx] = r.value;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let n = missing % nodes.len();
            let h = (missing / nodes.len()) % horizons.len();
            let o = missing / (nodes.len() * horizons.len());
            return Err(Error::InvalidParameter(format!(
                "missing forecast for node {:?} at origin {:?} horizon {}",
                nodes[n], origins[o], horizons[h]
            )));
        }
        Ok(ForecastTensor {
            origins,
            horizons,
            nodes,
            values,
        })
    }

    pub fn origins(&self) -> &[String] {
        &self.origins
    }

    pub fn horizons(&self) -> &[usize] {
        &self.horizons
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// Base forecast vector for one origin and horizon, in node order.
    pub fn vector(&self, o_idx: usize, h_idx: usize) -> DVector<f64> {
        let start = (o_idx * self.horizons.len() + h_idx) * self.nodes.len();
        DVector::from_column_slice(&self.values[start..start + self.nodes.len()])
    }

    /// Reorders the node axis into the hierarchy's canonical order.
    pub fn align_to(&self, h: &Hierarchy) -> Result<ForecastTensor> {
        if self.nodes.len() != h.m() {
            return Err(Error::DimensionMismatch(format!(
                "forecasts cover {} nodes, hierarchy has {}",
                self.nodes.len(),
                h.m()
            )));
        }
        let perm: Vec<usize> = h
            .nodes()
            .iter()
            .map(|name| {
                self.nodes
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::UnknownNode(format!("no forecasts for node {name:?}")))
            })
            .collect::<Result<_>>()?;
        let n = self.nodes.len();
        let mut values = Vec::with_capacity(self.values.len());
        for block in self.values.chunks(n) {
            values.extend(perm.iter().map(|&p| block[p]));
        }
        Ok(ForecastTensor {
            origins: self.origins.clone(),
            horizons: self.horizons.clone(),
            nodes: h.nodes().to_vec(),
            values,
        })
    }
}

/// Knobs for a rolling evaluation.
#[derive(Debug, Clone)]
pub struct EvaluationOptions {
    /// Cap on training pairs per fit; older pairs fall out of the window.
    pub window: usize,
    /// Fewest training pairs a data-driven fit may run on.
    pub min_train: usize,
    /// Tune penalties separately at every horizon instead of reusing the
    /// shortest horizon's selection.
    pub tune_per_horizon: bool,
    pub cv: CvPlan,
    pub lasso: GroupLassoOptions,
}

impl Default for EvaluationOptions {
    fn default() -> EvaluationOptions {
        EvaluationOptions {
            window: usize::MAX,
            min_train: 10,
            tune_per_horizon: false,
            cv: CvPlan::default(),
            lasso: GroupLassoOptions::default(),
        }
    }
}

/// Percentage change of `method` against `base`; negative is better.
pub fn prial(method: f64, base: f64) -> f64 {
    if base == 0.0 {
        if method == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (method - base) / base * 100.0
    }
}

/// Accuracy of one method over the evaluation cube.
#[derive(Debug, Clone, Serialize)]
pub struct MethodEvaluation {
    /// The method's tag (parseable back into a [`Method`]).
    pub method: String,
    /// Mean squared forecast error by `[horizon][node]`.
    pub msfe: Vec<Vec<f64>>,
    /// Percentage change vs the base forecasts, same shape.
    pub prial: Vec<Vec<f64>>,
    /// Node-mean MSFE by `[horizon][level]`.
    pub level_msfe: Vec<Vec<f64>>,
    /// Percentage change of `level_msfe` vs base, same shape.
    pub level_prial: Vec<Vec<f64>>,
    /// Horizon-range summaries (present when the cube spans them).
    pub range_prial: Vec<RangePrial>,
    /// Penalties selected per `[origin][horizon]` for tuned methods.
    pub selected_penalties: Option<Vec<Vec<f64>>>,
    /// Active predictor groups per `[origin][horizon]` for combination
    /// methods.
    pub active_counts: Option<Vec<Vec<usize>>>,
}

/// Accuracy averaged over a horizon range before comparison.
#[derive(Debug, Clone, Serialize)]
pub struct RangePrial {
    pub from_horizon: usize,
    pub to_horizon: usize,
    /// Per level, from range-averaged level MSFE.
    pub level_prial: Vec<f64>,
    /// All nodes pooled.
    pub overall_prial: f64,
}

/// Output of [`rolling_evaluate`].
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub nodes: Vec<String>,
    /// Depth of each node (root is 0), aligned with `nodes`.
    pub node_levels: Vec<usize>,
    /// The distinct depths, ascending; indexes the per-level columns.
    pub levels: Vec<usize>,
    pub horizons: Vec<usize>,
    pub origins: Vec<String>,
    /// How level and range figures combine nodes.
    pub aggregation: String,
    /// Base forecast MSFE by `[horizon][node]`.
    pub base_msfe: Vec<Vec<f64>>,
    /// Base node-mean MSFE by `[horizon][level]`.
    pub base_level_msfe: Vec<Vec<f64>>,
    pub methods: Vec<MethodEvaluation>,
}

impl EvaluationReport {
    pub fn method(&self, tag: &str) -> Option<&MethodEvaluation> {
        self.methods.iter().find(|m| m.method == tag)
    }
}

/// Indices into the origin axis usable as training pairs at one horizon:
/// pairs whose target time is no later than the evaluation origin, newest
/// `window` only.
fn training_indices(
    positions: &[usize],
    eval_idx: usize,
    horizon: usize,
    window: usize,
) -> Vec<usize> {
    let cutoff = match positions[eval_idx].checked_sub(horizon) {
        Some(c) => c,
        None => return Vec::new(),
    };
    let end = positions.partition_point(|&p| p <= cutoff);
    let start = end.saturating_sub(window);
    (start..end).collect()
}

fn level_means(levels: &[usize], distinct: &[usize], per_node: &[f64]) -> Vec<f64> {
    distinct
        .iter()
        .map(|&lvl| {
            let members: Vec<f64> = per_node
                .iter()
                .zip(levels)
                .filter(|(_, &l)| l == lvl)
                .map(|(&v, _)| v)
                .collect();
            members.iter().sum::<f64>() / members.len() as f64
        })
        .collect()
}

/// Reconciled forecasts from one origin.
#[derive(Debug, Clone, Serialize)]
pub struct ReconcileOutput {
    pub origin: String,
    pub method: String,
    pub horizons: Vec<usize>,
    pub nodes: Vec<String>,
    /// Reconciled values by `[horizon][node]`.
    pub values: Vec<Vec<f64>>,
    /// Penalty used per horizon for tuned methods.
    pub selected_penalties: Option<Vec<f64>>,
    /// Active predictor groups per horizon for combination maps.
    pub active_groups: Option<Vec<usize>>,
}

/// Training matrices for one origin and horizon: the newest `window` pairs
/// among `rows`.
fn training_matrices(
    actuals: &PanelMatrix,
    forecasts: &ForecastTensor,
    positions: &[usize],
    rows: &[usize],
    h_idx: usize,
    horizon: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = forecasts.nodes().len();
    let mut x = DMatrix::zeros(rows.len(), m);
    let mut y = DMatrix::zeros(rows.len(), m);
    for (r, &j) in rows.iter().enumerate() {
        x.row_mut(r).copy_from(&forecasts.vector(j, h_idx).transpose());
        y.row_mut(r)
            .copy_from(&actuals.values().row(positions[j] + horizon));
    }
    (x, y)
}

fn tune_on(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    method: Method,
    options: &EvaluationOptions,
) -> Result<tuning::TuningResult> {
    let (penalty, std, icept) = match method {
        Method::Combination {
            penalty,
            standardization,
            intercept,
        } => (penalty, standardization, intercept),
        other => {
            return Err(Error::InvalidParameter(format!(
                "method {other} has no tuning parameter"
            )))
        }
    };
    let grid = TuningGrid::from_data(x, y, icept)?;
    tuning::rolling_cv(x, y, penalty, std, icept, &grid, &options.cv, &options.lasso)
}

/// Reconciles the forecast cube at one origin (the latest by default),
/// training data-driven methods on pairs whose targets precede that
/// origin. Horizons may extend past the end of the actuals: only training
/// needs realized values.
pub fn reconcile_at_origin(
    hierarchy: &Hierarchy,
    actuals: &PanelMatrix,
    forecasts: &ForecastTensor,
    method: Method,
    origin: Option<&str>,
    penalty_override: Option<f64>,
    options: &EvaluationOptions,
) -> Result<ReconcileOutput> {
    if options.window == 0 {
        return Err(Error::InvalidParameter(
            "training window must be positive".into(),
        ));
    }
    let actuals = actuals.align_to(hierarchy)?;
    let forecasts = forecasts.align_to(hierarchy)?;
    if hierarchy.max_relative_residual(actuals.values())? > reconcile::COHERENT_INPUT_TOL {
        return Err(Error::InvalidParameter(
            "actuals are not coherent under the hierarchy".into(),
        ));
    }
    let origin_label = match origin {
        Some(o) => o.to_string(),
        None => forecasts.origins().last().expect("cube is nonempty").clone(),
    };
    let eval_idx = forecasts
        .origins()
        .iter()
        .position(|o| *o == origin_label)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("origin {origin_label:?} has no forecasts"))
        })?;

    // Origins present in the actuals can contribute training pairs; the
    // cube may also hold genuinely future origins, which cannot.
    let mut pair_indices = Vec::new();
    let mut pair_positions = Vec::new();
    for (i, o) in forecasts.origins().iter().enumerate() {
        if let Some(pos) = actuals.time_position(o) {
            pair_indices.push(i);
            pair_positions.push(pos);
        }
    }
    let eval_pos = actuals.time_position(&origin_label);
    if method.needs_training() && eval_pos.is_none() {
        return Err(Error::InvalidParameter(format!(
            "origin {origin_label:?} is not in the actuals, so {method} has nothing to train on"
        )));
    }

    let horizons = forecasts.horizons().to_vec();
    let mut values = Vec::with_capacity(horizons.len());
    let mut penalties = Vec::new();
    let mut actives = Vec::new();
    let mut reused_penalty = penalty_override;

    let static_fit = if method.needs_training() {
        None
    } else {
        Some(reconcile::fit_method(
            hierarchy,
            method,
            None,
            None,
            1,
            &CombinationOptions {
                lasso: options.lasso,
            },
        )?)
    };
    for (h_idx, &horizon) in horizons.iter().enumerate() {
        let fitted_here;
        let fitted = if let Some(f) = &static_fit {
            f
        } else {
            let eval_pos = eval_pos.expect("checked above");
            let cutoff = eval_pos.checked_sub(horizon);
            let usable: Vec<usize> = match cutoff {
                None => Vec::new(),
                Some(c) => {
                    let end = pair_positions.partition_point(|&p| p <= c);
                    let start = end.saturating_sub(options.window);
                    pair_indices[start..end].to_vec()
                }
            };
            if usable.len() < options.min_train.max(1) {
                return Err(Error::InsufficientData(format!(
                    "method {method} at origin {origin_label:?} horizon {horizon} has {} \
                     training pairs, needs {}",
                    usable.len(),
                    options.min_train.max(1)
                )));
            }
            let mut local_positions = vec![usize::MAX; forecasts.origins().len()];
            for (k, &i) in pair_indices.iter().enumerate() {
                local_positions[i] = pair_positions[k];
            }
            let (x, y) =
                training_matrices(&actuals, &forecasts, &local_positions, &usable, h_idx, horizon);
            let tuned = if method.needs_tuning() {
                let selected = match (options.tune_per_horizon, reused_penalty) {
                    (false, Some(v)) => v,
                    (true, Some(v)) if penalty_override.is_some() => v,
                    _ => {
                        let result = tune_on(&x, &y, method, options)?;
                        reused_penalty = Some(result.selected);
                        result.selected
                    }
                };
                penalties.push(selected);
                Some(selected)
            } else {
                None
            };
            fitted_here = reconcile::fit_method(
                hierarchy,
                method,
                Some((&x, &y)),
                tuned,
                horizon,
                &CombinationOptions {
                    lasso: options.lasso,
                },
            )?;
            &fitted_here
        };
        if let ReconcilerMap::Combination(map) = &fitted.map {
            actives.push(map.active_groups());
        }
        let reconciled = fitted.apply(&forecasts.vector(eval_idx, h_idx))?;
        values.push(reconciled.iter().copied().collect());
    }

    Ok(ReconcileOutput {
        origin: origin_label,
        method: method.to_string(),
        horizons,
        nodes: hierarchy.nodes().to_vec(),
        values,
        selected_penalties: if penalties.is_empty() {
            None
        } else {
            Some(penalties)
        },
        active_groups: if actives.is_empty() { None } else { Some(actives) },
    })
}

/// Runs penalty selection for one tuned method on the pairs available at
/// one origin and horizon (defaults: the latest origin, the shortest
/// horizon).
pub fn tune_at_origin(
    hierarchy: &Hierarchy,
    actuals: &PanelMatrix,
    forecasts: &ForecastTensor,
    method: Method,
    origin: Option<&str>,
    horizon: Option<usize>,
    options: &EvaluationOptions,
) -> Result<tuning::TuningResult> {
    if !method.needs_tuning() {
        return Err(Error::InvalidParameter(format!(
            "method {method} has no tuning parameter"
        )));
    }
    let actuals = actuals.align_to(hierarchy)?;
    let forecasts = forecasts.align_to(hierarchy)?;
    if hierarchy.max_relative_residual(actuals.values())? > reconcile::COHERENT_INPUT_TOL {
        return Err(Error::InvalidParameter(
            "actuals are not coherent under the hierarchy".into(),
        ));
    }
    let origin_label = match origin {
        Some(o) => o.to_string(),
        None => forecasts.origins().last().expect("cube is nonempty").clone(),
    };
    let horizon = horizon.unwrap_or(forecasts.horizons()[0]);
    let h_idx = forecasts
        .horizons()
        .iter()
        .position(|&h| h == horizon)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("horizon {horizon} not in the forecasts"))
        })?;
    let eval_pos = actuals.time_position(&origin_label).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "origin {origin_label:?} is not in the actuals, so there are no pairs to tune on"
        ))
    })?;

    let mut pair_indices = Vec::new();
    let mut pair_positions = Vec::new();
    for (i, o) in forecasts.origins().iter().enumerate() {
        if let Some(pos) = actuals.time_position(o) {
            if pos + horizon <= eval_pos {
                pair_indices.push(i);
                pair_positions.push(pos);
            }
        }
    }
    let start = pair_indices.len().saturating_sub(options.window);
    let rows = &pair_indices[start..];
    let positions_by_cube_index: Vec<usize> = {
        let mut v = vec![usize::MAX; forecasts.origins().len()];
        for (k, &i) in pair_indices.iter().enumerate() {
            v[i] = pair_positions[k];
        }
        v
    };
    let (x, y) = training_matrices(
        &actuals,
        &forecasts,
        &positions_by_cube_index,
        rows,
        h_idx,
        horizon,
    );
    tune_on(&x, &y, method, options)
}

/// Evaluates `methods` against the base forecasts over every origin in the
/// cube. Data-driven methods are refit at each origin and horizon from the
/// trailing window of past forecast/actual pairs; penalized combinations
/// are tuned by rolling cross-validation inside that window.
pub fn rolling_evaluate(
    hierarchy: &Hierarchy,
    actuals: &PanelMatrix,
    forecasts: &ForecastTensor,
    methods: &[Method],
    options: &EvaluationOptions,
) -> Result<EvaluationReport> {
    if methods.is_empty() {
        return Err(Error::EmptyInput("no methods to evaluate".into()));
    }
    if options.window == 0 {
        return Err(Error::InvalidParameter(
            "training window must be positive".into(),
        ));
    }
    let actuals = actuals.align_to(hierarchy)?;
    let forecasts = forecasts.align_to(hierarchy)?;
    if hierarchy.max_relative_residual(actuals.values())? > reconcile::COHERENT_INPUT_TOL {
        return Err(Error::InvalidParameter(
            "actuals are not coherent under the hierarchy".into(),
        ));
    }

    let positions: Vec<usize> = forecasts
        .origins()
        .iter()
        .map(|o| {
            actuals
                .time_position(o)
                .ok_or_else(|| Error::InvalidParameter(format!("origin {o:?} not in actuals")))
        })
        .collect::<Result<_>>()?;
    let horizons = forecasts.horizons().to_vec();
    let max_h = *horizons.last().expect("cube has horizons");
    let last_target = positions.last().expect("cube has origins") + max_h;
    if last_target >= actuals.times().len() {
        return Err(Error::InsufficientData(format!(
            "actuals end at {:?} but the last origin needs {} more rows",
            actuals.times().last().expect("panel is nonempty"),
            last_target + 1 - actuals.times().len()
        )));
    }

    let m = hierarchy.m();
    let n_origins = forecasts.origins().len();
    let n_h = horizons.len();
    let node_levels = hierarchy.levels().to_vec();
    let mut levels: Vec<usize> = node_levels.clone();
    levels.sort_unstable();
    levels.dedup();

    // Early origins without enough history serve as training pairs only;
    // scoring starts once every horizon can be fit. Methods that never
    // train are scored everywhere.
    let mut required = 0usize;
    if methods.iter().any(|m| m.needs_training()) {
        required = options.min_train.max(1);
    }
    if methods.iter().any(|m| m.needs_tuning()) {
        required = required.max(options.cv.min_train + 1);
    }
    let eval_set: Vec<usize> = (0..n_origins)
        .filter(|&i| training_indices(&positions, i, max_h, options.window).len() >= required)
        .collect();
    if eval_set.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no origin has the {required} training pairs the requested methods need"
        )));
    }
    let n_eval = eval_set.len();

    // Per-horizon pair pools: base forecast and realized target per origin.
    let mut pool_x: Vec<DMatrix<f64>> = Vec::with_capacity(n_h);
    let mut pool_y: Vec<DMatrix<f64>> = Vec::with_capacity(n_h);
    for h_idx in 0..n_h {
        let mut x = DMatrix::zeros(n_origins, m);
        let mut y = DMatrix::zeros(n_origins, m);
        for o_idx in 0..n_origins {
            x.row_mut(o_idx)
                .copy_from(&forecasts.vector(o_idx, h_idx).transpose());
            y.row_mut(o_idx)
                .copy_from(&actuals.values().row(positions[o_idx] + horizons[h_idx]));
        }
        pool_x.push(x);
        pool_y.push(y);
    }

    // Base accuracy over the scored origins.
    let mut base_sums = vec![vec![0.0; m]; n_h];
    for h_idx in 0..n_h {
        for &o_idx in &eval_set {
            for node in 0..m {
                let e = pool_y[h_idx][(o_idx, node)] - pool_x[h_idx][(o_idx, node)];
                base_sums[h_idx][node] += e * e;
            }
        }
    }
    let base_msfe: Vec<Vec<f64>> = base_sums
        .iter()
        .map(|row| row.iter().map(|s| s / n_eval as f64).collect())
        .collect();
    let base_level_msfe: Vec<Vec<f64>> = base_msfe
        .iter()
        .map(|row| level_means(&node_levels, &levels, row))
        .collect();

    let comb_opts = CombinationOptions {
        lasso: options.lasso,
    };
    let mut method_reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut sums = vec![vec![0.0; m]; n_h];
        let mut penalties: Vec<Vec<f64>> = Vec::new();
        let mut actives: Vec<Vec<usize>> = Vec::new();
        let is_combination = matches!(method, Method::Combination { .. });

        // Training-free maps are origin-independent; fit them once.
        let static_fit = if method.needs_training() {
            None
        } else {
            Some(reconcile::fit_method(
                hierarchy, method, None, None, 1, &comb_opts,
            )?)
        };

        for &o_idx in &eval_set {
            let mut origin_penalties = Vec::new();
            let mut origin_actives = Vec::new();
            let mut reused_penalty: Option<f64> = None;
            for h_idx in 0..n_h {
                let fitted_here;
                let fitted = if let Some(f) = &static_fit {
                    f
                } else {
                    let rows = training_indices(
                        &positions,
                        o_idx,
                        horizons[h_idx],
                        options.window,
                    );
                    if rows.len() < options.min_train {
                        return Err(Error::InsufficientData(format!(
                            "method {method} at origin {:?} horizon {} has {} training pairs, needs {}",
                            forecasts.origins()[o_idx],
                            horizons[h_idx],
                            rows.len(),
                            options.min_train
                        )));
                    }
                    let x = pool_x[h_idx].select_rows(rows.iter());
                    let y = pool_y[h_idx].select_rows(rows.iter());
                    let tuned = if method.needs_tuning() {
                        let selected = match (options.tune_per_horizon, reused_penalty) {
                            (false, Some(v)) => v,
                            _ => {
                                let result = tune_on(&x, &y, method, options)?;
                                reused_penalty = Some(result.selected);
                                result.selected
                            }
                        };
                        Some(selected)
                    } else {
                        None
                    };
                    if method.needs_tuning() {
                        origin_penalties.push(tuned.expect("tuned methods select a penalty"));
                    }
                    fitted_here = reconcile::fit_method(
                        hierarchy,
                        method,
                        Some((&x, &y)),
                        tuned,
                        horizons[h_idx],
                        &comb_opts,
                    )?;
                    &fitted_here
                };
                if let ReconcilerMap::Combination(map) = &fitted.map {
                    origin_actives.push(map.active_groups());
                }
                let base_vec = forecasts.vector(o_idx, h_idx);
                let reconciled = fitted.apply(&base_vec)?;
                let target = pool_y[h_idx].row(o_idx).transpose();
                for node in 0..m {
                    let e = target[node] - reconciled[node];
                    sums[h_idx][node] += e * e;
                }
            }
            if !origin_penalties.is_empty() {
                penalties.push(origin_penalties);
            }
            if is_combination && !origin_actives.is_empty() {
                actives.push(origin_actives);
            }
        }

        let msfe: Vec<Vec<f64>> = sums
            .iter()
            .map(|row| row.iter().map(|s| s / n_eval as f64).collect())
            .collect();
        let prial_grid: Vec<Vec<f64>> = msfe
            .iter()
            .zip(&base_msfe)
            .map(|(mr, br)| mr.iter().zip(br).map(|(&a, &b)| prial(a, b)).collect())
            .collect();
        let level_msfe: Vec<Vec<f64>> = msfe
            .iter()
            .map(|row| level_means(&node_levels, &levels, row))
            .collect();
        let level_prial: Vec<Vec<f64>> = level_msfe
            .iter()
            .zip(&base_level_msfe)
            .map(|(mr, br)| mr.iter().zip(br).map(|(&a, &b)| prial(a, b)).collect())
            .collect();

        let mut range_prial = Vec::new();
        for range_end in [6usize, 12] {
            let idx: Vec<usize> = (1..=range_end)
                .filter_map(|target| horizons.iter().position(|&h| h == target))
                .collect();
            if idx.len() != range_end {
                continue;
            }
            let avg = |rows: &[Vec<f64>], col: usize| {
                idx.iter().map(|&i| rows[i][col]).sum::<f64>() / idx.len() as f64
            };
            let lp: Vec<f64> = (0..levels.len())
                .map(|l| prial(avg(&level_msfe, l), avg(&base_level_msfe, l)))
                .collect();
            let overall_method = (0..m).map(|nd| avg(&msfe, nd)).sum::<f64>() / m as f64;
            let overall_base = (0..m).map(|nd| avg(&base_msfe, nd)).sum::<f64>() / m as f64;
            range_prial.push(RangePrial {
                from_horizon: 1,
                to_horizon: range_end,
                level_prial: lp,
                overall_prial: prial(overall_method, overall_base),
            });
        }

        method_reports.push(MethodEvaluation {
            method: method.to_string(),
            msfe,
            prial: prial_grid,
            level_msfe,
            level_prial,
            range_prial,
            selected_penalties: if penalties.is_empty() {
                None
            } else {
                Some(penalties)
            },
            active_counts: if actives.is_empty() {
                None
            } else {
                Some(actives)
            },
        });
    }

    Ok(EvaluationReport {
        nodes: hierarchy.nodes().to_vec(),
        node_levels,
        levels,
        horizons,
        origins: eval_set
            .iter()
            .map(|&i| forecasts.origins()[i].clone())
            .collect(),
        aggregation: "unweighted node mean within level".into(),
        base_msfe,
        base_level_msfe,
        methods: method_reports,
    })
}
