//! A three-series factor simulation with known-optimal forecasts.
//!
//! The data generating process drives two bottom series from one latent
//! AR(1) factor:
//!
//! ```text
//! f_t  = 0.6 f_{t-1} + e1_t                  var(f) = 1 / (1 - 0.36)
//! y2_t = 1 + 0.8 f_t + e2_t                  var(y2) = 1 + 0.64 var(f) = 2
//! y3_t = 1 + 0.8 f_t + e3_t
//! y1_t = y2_t + y3_t                         e ~ iid N(0, I)
//! ```
//!
//! Each series, viewed on its own, is an ARMA(1,1) whose one-step forecast
//! has a closed form: a constant plus geometrically decaying weights on past
//! values, `weight(y_{T+1-j}) = (0.6 - theta) theta^(j-1)`. The moving
//! average roots and innovation variances implied by the DGP are
//! `theta = 0.24, var = 4.99` for the top series and `theta = 0.33,
//! var = 1.8` for each bottom series, which pins the best achievable
//! unreconciled one-step MSFE. That gives exact targets to test estimators
//! against: reconciliation can only improve on these forecasts by moving
//! information across series.
//!
//! Oracle quantities (the population error covariance of the base forecasts
//! and the population combination-regression coefficients) have no closed
//! form here; they are computed by brute-force Monte Carlo with a fixed
//! dedicated seed and enough draws that their noise is negligible next to
//! the tolerances used in tests.
//!
//! Everything is reproducible under any thread count: replication `i` of a
//! run with seed `s` always uses ChaCha stream `i` of seed `s`, and partial
//! sums are reduced in fixed block order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{CovEstimator, ErrorCovariance};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::panel::PanelMatrix;
use crate::penreg::{self, CoefficientMap};
use crate::reconcile;

/// Factor autoregression coefficient.
pub const PHI: f64 = 0.6;
/// Factor loading of each bottom series.
pub const LOADING: f64 = 0.8;
/// Intercept of each bottom series.
pub const BOTTOM_MEAN: f64 = 1.0;
/// Stationary factor variance `1 / (1 - PHI^2)`.
pub const FACTOR_VAR: f64 = 1.0 / (1.0 - PHI * PHI);

/// Sample length used by the calibration studies; long enough that the
/// truncated forecast weights lose less than 1e-90 of their mass.
pub const STUDY_SERIES_LEN: usize = 200;

/// Monte Carlo draws behind the oracle covariance and coefficients.
pub const DEFAULT_ORACLE_DRAWS: usize = 1_000_000;

/// Seed reserved for oracle computations, separate from study seeds.
pub const ORACLE_SEED: u64 = 884_279_719;

const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    /// All three base forecasts are the optimal univariate ones.
    Univariate,
    /// The second bottom series is forecast with direct knowledge of the
    /// next factor value; the others stay univariate. Information the
    /// univariate top forecast cannot see is then sitting in a bottom base
    /// forecast, the situation combination reconciliation exploits.
    FactorInformed,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Univariate => write!(f, "univariate"),
            Scenario::FactorInformed => write!(f, "factor"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "univariate" => Ok(Scenario::Univariate),
            "factor" | "factor_informed" | "factor-informed" => Ok(Scenario::FactorInformed),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario {other:?} (expected univariate or factor)"
            ))),
        }
    }
}

/// The three-node hierarchy the simulation lives on: `y1 = y2 + y3`.
pub fn standard_hierarchy() -> Hierarchy {
    Hierarchy::from_edges(&[
        ("y1".into(), None),
        ("y2".into(), Some("y1".into())),
        ("y3".into(), Some("y1".into())),
    ])
    .expect("static hierarchy is valid")
}

/// One simulated trajectory: `len` in-sample rows plus one target row.
#[derive(Debug, Clone)]
pub struct SimPath {
    /// Factor values, one per row (in-sample rows then the target row).
    pub f: Vec<f64>,
    /// Observations `[y1, y2, y3]`, `(len + 1) x 3`.
    pub y: DMatrix<f64>,
}

impl SimPath {
    pub fn in_sample_len(&self) -> usize {
        self.y.nrows() - 1
    }

    pub fn target(&self) -> DVector<f64> {
        self.y.row(self.y.nrows() - 1).transpose()
    }

    fn series(&self, col: usize) -> Vec<f64> {
        let t = self.in_sample_len();
        (0..t).map(|r| self.y[(r, col)]).collect()
    }
}

/// Draws one trajectory of `len` in-sample rows plus the target row.
pub fn simulate_path(rng: &mut ChaCha8Rng, len: usize) -> SimPath {
    let mut f_values = Vec::with_capacity(len + 1);
    let mut y = DMatrix::zeros(len + 1, 3);
    // Stationary start keeps every row at the unconditional distribution.
    let z0: f64 = StandardNormal.sample(rng);
    let mut f = FACTOR_VAR.sqrt() * z0;
    for t in 0..=len {
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let e3: f64 = StandardNormal.sample(rng);
        f = PHI * f + e1;
        let y2 = BOTTOM_MEAN + LOADING * f + e2;
        let y3 = BOTTOM_MEAN + LOADING * f + e3;
        y[(t, 0)] = y2 + y3;
        y[(t, 1)] = y2;
        y[(t, 2)] = y3;
        f_values.push(f);
    }
    SimPath { f: f_values, y }
}

/// The generator for replication `rep` of a run seeded with `seed`: stream
/// `rep` of the seeded cipher. Giving every replication its own stream is
/// what makes results independent of thread count and block schedule.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Simulated panels in canonical node order, one per replication.
pub fn generate_paths(seed: u64, len: usize, reps: usize) -> Result<Vec<PanelMatrix>> {
    if len == 0 || reps == 0 {
        return Err(Error::InvalidParameter(
            "simulation needs len > 0 and reps > 0".into(),
        ));
    }
    let columns: Vec<String> = vec!["y1".into(), "y2".into(), "y3".into()];
    (0..reps)
        .map(|rep| {
            let mut rng = replication_rng(seed, rep as u64);
            let path = simulate_path(&mut rng, len);
            let times = (1..=len).map(|t| t.to_string()).collect();
            PanelMatrix::new(path.y.rows(0, len).into_owned(), columns.clone(), times)
        })
        .collect()
}

/// Optimal one-step forecaster for one series' univariate representation.
#[derive(Debug, Clone, Copy)]
pub struct ArmaForecaster {
    /// Unconditional series mean.
    pub mean: f64,
    /// Autoregressive root (shared with the factor).
    pub ar: f64,
    /// Moving average root.
    pub ma: f64,
    /// One-step innovation variance: the best achievable MSFE.
    pub innovation_var: f64,
}

impl ArmaForecaster {
    /// The aggregate series `y1`.
    pub fn top() -> ArmaForecaster {
        ArmaForecaster {
            mean: 2.0 * BOTTOM_MEAN,
            ar: PHI,
            ma: 0.24,
            innovation_var: 4.99,
        }
    }

    /// Either bottom series.
    pub fn bottom() -> ArmaForecaster {
        ArmaForecaster {
            mean: BOTTOM_MEAN,
            ar: PHI,
            ma: 0.33,
            innovation_var: 1.8,
        }
    }

    /// One-step forecast: constant plus weights `(ar - ma) ma^(j-1)` on the
    /// j-th most recent observation, truncated at the start of the sample.
    /// The constant `mean (1 - ar) / (1 - ma)` makes the forecast
    /// unconditionally unbiased.
    pub fn forecast(&self, series: &[f64]) -> f64 {
        let mut weighted = 0.0;
        let mut pow = 1.0;
        for value in series.iter().rev() {
            weighted += pow * value;
            pow *= self.ma;
        }
        self.mean * (1.0 - self.ar) / (1.0 - self.ma) + (self.ar - self.ma) * weighted
    }
}

/// Base forecasts `[y1_hat, y2_hat, y3_hat]` for the target row of a path.
pub fn base_forecasts(path: &SimPath, scenario: Scenario) -> DVector<f64> {
    let top = ArmaForecaster::top();
    let bottom = ArmaForecaster::bottom();
    let y1 = top.forecast(&path.series(0));
    let y2 = bottom.forecast(&path.series(1));
    let y3 = match scenario {
        Scenario::Univariate => bottom.forecast(&path.series(2)),
        // The informed forecaster observes the factor one step ahead.
        Scenario::FactorInformed => BOTTOM_MEAN + LOADING * path.f[path.f.len() - 1],
    };
    DVector::from_column_slice(&[y1, y2, y3])
}

fn parallel_blocks<A, FInit, FStep, FMerge>(
    reps: usize,
    init: FInit,
    step: FStep,
    merge: FMerge,
) -> A
where
    A: Send,
    FInit: Fn() -> A + Sync,
    FStep: Fn(&mut A, u64) + Sync,
    FMerge: Fn(A, A) -> A,
{
    let blocks = reps.div_ceil(BLOCK);
    let partials: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let lo = b * BLOCK;
            let hi = ((b + 1) * BLOCK).min(reps);
            for rep in lo..hi {
                step(&mut acc, rep as u64);
            }
            acc
        })
        .collect();
    // Sequential fold in block order keeps float sums deterministic.
    partials
        .into_iter()
        .reduce(merge)
        .unwrap_or_else(|| init())
}

/// Population covariance of the three base forecast errors, estimated by
/// brute force from `draws` independent trajectories under the oracle seed.
pub fn oracle_error_cov(scenario: Scenario, draws: usize) -> Result<ErrorCovariance> {
    if draws == 0 {
        return Err(Error::InvalidParameter("oracle needs draws > 0".into()));
    }
    let seed = ORACLE_SEED ^ (scenario as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let sums = parallel_blocks(
        draws,
        || DMatrix::<f64>::zeros(3, 3),
        |acc, rep| {
            let mut rng = replication_rng(seed, rep);
            let path = simulate_path(&mut rng, STUDY_SERIES_LEN);
            let e = path.target() - base_forecasts(&path, scenario);
            for i in 0..3 {
                for j in 0..3 {
                    acc[(i, j)] += e[i] * e[j];
                }
            }
        },
        |a, b| a + b,
    );
    Ok(ErrorCovariance {
        w: sums / draws as f64,
        estimator: CovEstimator::Sample,
        horizon: 1,
        sample_size: draws,
        intensity: None,
    })
}

/// Population combination-regression coefficients (with intercept) of the
/// target on the three base forecasts, by least squares on `draws`
/// simulated pairs.
pub fn oracle_combination(scenario: Scenario, draws: usize) -> Result<CoefficientMap> {
    if draws == 0 {
        return Err(Error::InvalidParameter("oracle needs draws > 0".into()));
    }
    let seed = ORACLE_SEED ^ 0xD1CE_BA5E ^ (scenario as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // Accumulate normal equation blocks instead of materializing the draws:
    // [X'X  X'Y; sums] with X = (1, y_hat').
    struct Moments {
        xtx: DMatrix<f64>, // 4 x 4 including the constant
        xty: DMatrix<f64>, // 4 x 3
    }
    let moments = parallel_blocks(
        draws,
        || Moments {
            xtx: DMatrix::zeros(4, 4),
            xty: DMatrix::zeros(4, 3),
        },
        |acc, rep| {
            let mut rng = replication_rng(seed, rep);
            let path = simulate_path(&mut rng, STUDY_SERIES_LEN);
            let x = base_forecasts(&path, scenario);
            let y = path.target();
            let mut xrow = [1.0; 4];
            xrow[1..].copy_from_slice(x.as_slice());
            for i in 0..4 {
                for j in 0..4 {
                    acc.xtx[(i, j)] += xrow[i] * xrow[j];
                }
                for j in 0..3 {
                    acc.xty[(i, j)] += xrow[i] * y[j];
                }
            }
        },
        |a, b| Moments {
            xtx: a.xtx + b.xtx,
            xty: a.xty + b.xty,
        },
    );
    let chol = moments
        .xtx
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("oracle normal equations are singular".into()))?;
    let full = chol.solve(&moments.xty); // 4 x 3, first row is the intercept
    let b = full.rows(1, 3).into_owned();
    let intercept = full.row(0).transpose();
    Ok(CoefficientMap {
        b,
        intercept: Some(intercept),
        penalty: penreg::Penalty::None,
        standardization: penreg::Standardization::None,
        x_scale: None,
        y_scale: None,
    })
}

/// Published reference values for the calibration study's four MSFE sums.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StudyReference {
    pub base: f64,
    pub ols: f64,
    pub mint_oracle: f64,
    pub comb_oracle: f64,
}

/// Reference sums the study is expected to land near (within Monte Carlo
/// noise) for each scenario.
pub fn reference_sums(scenario: Scenario) -> StudyReference {
    match scenario {
        Scenario::Univariate => StudyReference {
            base: 8.600,
            ols: 8.583,
            mint_oracle: 8.569,
            comb_oracle: 8.484,
        },
        Scenario::FactorInformed => StudyReference {
            base: 7.776,
            ols: 7.508,
            mint_oracle: 4.343,
            comb_oracle: 3.952,
        },
    }
}

/// Best achievable MSFE sum when the next factor value is known exactly:
/// `var(e2) + var(e3) + var(e2 + e3)`.
pub const FACTOR_INFORMED_MINIMUM: f64 = 4.0;

/// Sums over the three series of one-step MSFEs for the base forecasts and
/// three reconciliations of them.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub scenario: Scenario,
    pub reps: usize,
    pub seed: u64,
    pub series_len: usize,
    pub oracle_draws: usize,
    /// Unreconciled base forecasts.
    pub base: f64,
    /// Orthogonal projection.
    pub ols: f64,
    /// Weighted projection under the oracle error covariance.
    pub mint_oracle: f64,
    /// Combination regression with oracle coefficients.
    pub comb_oracle: f64,
}

/// Runs the calibration study with the default oracle precision.
pub fn run_study(scenario: Scenario, reps: usize, seed: u64) -> Result<StudyReport> {
    run_study_with(scenario, reps, seed, DEFAULT_ORACLE_DRAWS)
}

/// As [`run_study`] with explicit oracle draws (tests use fewer).
pub fn run_study_with(
    scenario: Scenario,
    reps: usize,
    seed: u64,
    oracle_draws: usize,
) -> Result<StudyReport> {
    if reps == 0 {
        return Err(Error::InvalidParameter("study needs reps > 0".into()));
    }
    let h = standard_hierarchy();
    let p_ols = reconcile::ols_projection(&h)?;
    let w = oracle_error_cov(scenario, oracle_draws)?;
    let p_mint = reconcile::weighted_projection(&h, &w.w)?;
    let comb = oracle_combination(scenario, oracle_draws)?;

    let sums = parallel_blocks(
        reps,
        || [0.0_f64; 4],
        |acc, rep| {
            let mut rng = replication_rng(seed, rep);
            let path = simulate_path(&mut rng, STUDY_SERIES_LEN);
            let base = base_forecasts(&path, scenario);
            let target = path.target();
            let e_base = &target - &base;
            let e_ols = &target - &p_ols * &base;
            let e_mint = &target - &p_mint * &base;
            let e_comb = &target - comb.predict(&base).expect("dimensions fixed");
            acc[0] += e_base.norm_squared();
            acc[1] += e_ols.norm_squared();
            acc[2] += e_mint.norm_squared();
            acc[3] += e_comb.norm_squared();
        },
        |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]],
    );
    let n = reps as f64;
    Ok(StudyReport {
        scenario,
        reps,
        seed,
        series_len: STUDY_SERIES_LEN,
        oracle_draws,
        base: sums[0] / n,
        ols: sums[1] / n,
        mint_oracle: sums[2] / n,
        comb_oracle: sums[3] / n,
    })
}

/// Outcome of the conditional-unbiasedness counterexample: a map that is
/// *not* a projection (`S G S != S`) yet keeps conditionally unbiased base
/// forecasts unbiased, because the DGP is symmetric in the bottom series.
#[derive(Debug, Clone, Serialize)]
pub struct TopDownCheck {
    pub reps: usize,
    pub seed: u64,
    /// Mean reconciled error per series.
    pub mean_error: [f64; 3],
    /// Monte Carlo standard error of each mean.
    pub mc_se: [f64; 3],
    /// `G S` of the half-and-half top-down map (exactly [[.5,.5],[.5,.5]]).
    pub gs: [[f64; 2]; 2],
    /// Whether `S G S == S` exactly (it must not).
    pub projection_identity_holds: bool,
}

impl TopDownCheck {
    /// Every mean error within `k` Monte Carlo standard errors of zero.
    pub fn unbiased_within(&self, k: f64) -> bool {
        self.mean_error
            .iter()
            .zip(&self.mc_se)
            .all(|(m, se)| m.abs() <= k * se)
    }
}

/// Exact conditional mean of the next observation given the sample, via the
/// Kalman filter on the one-dimensional factor state.
///
/// Observing `(y2, y3)` (the total adds nothing: it is their sum), with
/// `a = 0.64 P_pred` the filter steps have scalar closed forms:
///
/// ```text
/// gain * innovation = 0.8 P_pred / (1 + 2a) * (e2 + e3)
/// P_filt = P_pred / (1 + 2a)       P_pred' = 0.36 P_filt + 1
/// ```
pub fn conditional_mean_next(path_rows: &DMatrix<f64>) -> DVector<f64> {
    let t = path_rows.nrows();
    let mut f_pred = 0.0;
    let mut p_pred = FACTOR_VAR;
    for r in 0..t {
        let e2 = (path_rows[(r, 1)] - BOTTOM_MEAN) - LOADING * f_pred;
        let e3 = (path_rows[(r, 2)] - BOTTOM_MEAN) - LOADING * f_pred;
        let a = LOADING * LOADING * p_pred;
        let f_filt = f_pred + LOADING * p_pred / (1.0 + 2.0 * a) * (e2 + e3);
        let p_filt = p_pred / (1.0 + 2.0 * a);
        f_pred = PHI * f_filt;
        p_pred = PHI * PHI * p_filt + 1.0;
    }
    let bottom = BOTTOM_MEAN + LOADING * f_pred;
    DVector::from_column_slice(&[2.0 * bottom, bottom, bottom])
}

/// Monte Carlo check that the half-and-half top-down map preserves
/// conditional unbiasedness on this DGP. Base forecasts are the exact
/// conditional means plus standard normal noise.
pub fn top_down_unbiasedness_check(reps: usize, seed: u64) -> Result<TopDownCheck> {
    if reps == 0 {
        return Err(Error::InvalidParameter("check needs reps > 0".into()));
    }
    let h = standard_hierarchy();
    let g = DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
    let sg = h.summing_matrix() * &g;

    let gs_mat = &g * h.summing_matrix();
    let gs = [[gs_mat[(0, 0)], gs_mat[(0, 1)]], [gs_mat[(1, 0)], gs_mat[(1, 1)]]];
    let sgs = h.summing_matrix() * &g * h.summing_matrix();
    let projection_identity_holds = sgs == *h.summing_matrix();

    let (sum, sum_sq) = parallel_blocks(
        reps,
        || ([0.0_f64; 3], [0.0_f64; 3]),
        |acc, rep| {
            let mut rng = replication_rng(seed, rep);
            let path = simulate_path(&mut rng, STUDY_SERIES_LEN);
            let sample = path.y.rows(0, STUDY_SERIES_LEN).into_owned();
            let mut base = conditional_mean_next(&sample);
            for i in 0..3 {
                let u: f64 = StandardNormal.sample(&mut rng);
                base[i] += u;
            }
            let err = path.target() - &sg * base;
            for i in 0..3 {
                acc.0[i] += err[i];
                acc.1[i] += err[i] * err[i];
            }
        },
        |a, b| {
            (
                [a.0[0] + b.0[0], a.0[1] + b.0[1], a.0[2] + b.0[2]],
                [a.1[0] + b.1[0], a.1[1] + b.1[1], a.1[2] + b.1[2]],
            )
        },
    );
    let n = reps as f64;
    let mut mean_error = [0.0; 3];
    let mut mc_se = [0.0; 3];
    for i in 0..3 {
        mean_error[i] = sum[i] / n;
        let var = (sum_sq[i] / n - mean_error[i] * mean_error[i]).max(0.0);
        mc_se[i] = (var / n).sqrt();
    }
    Ok(TopDownCheck {
        reps,
        seed,
        mean_error,
        mc_se,
        gs,
        projection_identity_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn factor_and_observation_variances_match_theory() {
        let mut rng = replication_rng(1, 0);
        let n = 1_000_000;
        let path = simulate_path(&mut rng, n - 1);
        let f_var = path.f.iter().map(|v| v * v).sum::<f64>() / n as f64
            - (path.f.iter().sum::<f64>() / n as f64).powi(2);
        assert_abs_diff_eq!(f_var, FACTOR_VAR, epsilon = 0.01);

        let y2 = path.y.column(1);
        let mean = y2.mean();
        let var = y2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 0.01);
        assert_abs_diff_eq!(var, 2.0, epsilon = 0.01);
    }

    #[test]
    fn forecast_weights_decay_geometrically() {
        let b = ArmaForecaster::bottom();
        let t = 20;
        let zeros = vec![0.0; t];
        let baseline = b.forecast(&zeros);
        // Unit impulse at the most recent observation: weight 0.27.
        let mut s = zeros.clone();
        s[t - 1] = 1.0;
        assert_abs_diff_eq!(b.forecast(&s) - baseline, 0.27, epsilon = 1e-12);
        // Second most recent: 0.27 * 0.33 = 0.0891.
        let mut s = zeros.clone();
        s[t - 2] = 1.0;
        assert_abs_diff_eq!(b.forecast(&s) - baseline, 0.0891, epsilon = 1e-12);
    }

    #[test]
    fn forecast_of_flat_series_at_the_mean_is_the_mean() {
        for (fc, mean) in [(ArmaForecaster::top(), 2.0), (ArmaForecaster::bottom(), 1.0)] {
            let series = vec![mean; STUDY_SERIES_LEN];
            assert_abs_diff_eq!(fc.forecast(&series), mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn top_series_base_msfe_matches_innovation_variance() {
        let reps = 100_000;
        let sum = parallel_blocks(
            reps,
            || 0.0_f64,
            |acc, rep| {
                let mut rng = replication_rng(7, rep);
                let path = simulate_path(&mut rng, STUDY_SERIES_LEN);
                let base = base_forecasts(&path, Scenario::Univariate);
                let e = path.target()[0] - base[0];
                *acc += e * e;
            },
            |a, b| a + b,
        );
        let msfe = sum / reps as f64;
        assert_abs_diff_eq!(msfe, ArmaForecaster::top().innovation_var, epsilon = 0.05);
    }

    #[test]
    fn oracle_covariance_diagonal_matches_innovation_variances() {
        let w = oracle_error_cov(Scenario::Univariate, 200_000).unwrap().w;
        assert_abs_diff_eq!(w[(0, 0)], 4.99, epsilon = 0.06);
        assert_abs_diff_eq!(w[(1, 1)], 1.8, epsilon = 0.03);
        assert_abs_diff_eq!(w[(2, 2)], 1.8, epsilon = 0.03);
        // Symmetry is structural.
        assert_eq!(w[(0, 1)], w[(1, 0)]);
    }

    #[test]
    fn informed_scenario_oracle_puts_full_weight_on_the_informed_forecast() {
        let map = oracle_combination(Scenario::FactorInformed, 200_000).unwrap();
        // Column for y2: y2 = yhat3 + independent noise, so the population
        // coefficients are (0, 0, 1) with zero intercept.
        assert_abs_diff_eq!(map.b[(2, 1)], 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(map.b[(0, 1)], 0.0, epsilon = 0.02);
        assert_abs_diff_eq!(map.b[(1, 1)], 0.0, epsilon = 0.02);
        // Top column doubles the informed forecast.
        assert_abs_diff_eq!(map.b[(2, 0)], 2.0, epsilon = 0.04);
        let c = map.intercept.as_ref().unwrap();
        assert_abs_diff_eq!(c[1], 0.0, epsilon = 0.05);

        // The map lands in the coherent subspace up to Monte Carlo noise.
        let h = standard_hierarchy();
        let defect = h.null_space_basis().transpose() * map.b.transpose();
        assert!(defect.amax() < 1e-2);
    }

    #[test]
    fn univariate_study_reproduces_reference_ordering() {
        let report = run_study_with(Scenario::Univariate, 20_000, 11, 150_000).unwrap();
        let reference = reference_sums(Scenario::Univariate);
        assert_abs_diff_eq!(report.base, reference.base, epsilon = 0.15);
        assert_abs_diff_eq!(report.ols, reference.ols, epsilon = 0.15);
        assert_abs_diff_eq!(report.mint_oracle, reference.mint_oracle, epsilon = 0.15);
        assert_abs_diff_eq!(report.comb_oracle, reference.comb_oracle, epsilon = 0.15);
        // Orthogonal projection contracts errors pointwise, so this holds
        // with certainty; the others hold by the size of the gaps.
        assert!(report.ols <= report.base);
        assert!(report.mint_oracle <= report.ols);
        assert!(report.comb_oracle <= report.mint_oracle);
    }

    #[test]
    fn informed_study_approaches_the_known_floor() {
        let report = run_study_with(Scenario::FactorInformed, 20_000, 13, 150_000).unwrap();
        assert_abs_diff_eq!(report.comb_oracle, FACTOR_INFORMED_MINIMUM, epsilon = 0.1);
        assert!(report.mint_oracle < report.ols);
        assert!(report.comb_oracle <= report.mint_oracle);
    }

    #[test]
    fn study_results_do_not_depend_on_thread_count() {
        let single = {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            pool.install(|| run_study_with(Scenario::Univariate, 5_000, 3, 20_000).unwrap())
        };
        let multi = {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
            pool.install(|| run_study_with(Scenario::Univariate, 5_000, 3, 20_000).unwrap())
        };
        assert_eq!(single.base.to_bits(), multi.base.to_bits());
        assert_eq!(single.ols.to_bits(), multi.ols.to_bits());
        assert_eq!(single.mint_oracle.to_bits(), multi.mint_oracle.to_bits());
        assert_eq!(single.comb_oracle.to_bits(), multi.comb_oracle.to_bits());
    }

    #[test]
    fn conditional_mean_tracks_the_factor() {
        // With many observations the filtered factor is close to the truth,
        // so the conditional mean predicts better than the unconditional.
        let reps = 2_000;
        let mut better = 0;
        for rep in 0..reps {
            let mut rng = replication_rng(17, rep);
            let path = simulate_path(&mut rng, STUDY_SERIES_LEN);
            let sample = path.y.rows(0, STUDY_SERIES_LEN).into_owned();
            let mu = conditional_mean_next(&sample);
            let target = path.target();
            let cond = (target[1] - mu[1]).abs();
            let uncond = (target[1] - 1.0).abs();
            if cond < uncond {
                better += 1;
            }
        }
        // The conditional mean should win well over half the time.
        assert!(better as f64 > 0.55 * reps as f64, "won {better}/{reps}");
    }

    #[test]
    fn top_down_map_is_unbiased_without_being_a_projection() {
        let check = top_down_unbiasedness_check(20_000, 19).unwrap();
        assert!(!check.projection_identity_holds);
        assert_eq!(check.gs, [[0.5, 0.5], [0.5, 0.5]]);
        assert!(
            check.unbiased_within(3.5),
            "mean errors {:?} exceed 3.5 standard errors {:?}",
            check.mean_error,
            check.mc_se
        );
    }

    #[test]
    fn generated_panels_are_coherent() {
        let panels = generate_paths(5, 40, 3).unwrap();
        let h = standard_hierarchy();
        for p in &panels {
            let aligned = p.align_to(&h).unwrap();
            assert!(h.max_relative_residual(aligned.values()).unwrap() < 1e-12);
        }
        // Distinct replications differ.
        assert_ne!(
            panels[0].values()[(0, 0)].to_bits(),
            panels[1].values()[(0, 0)].to_bits()
        );
    }

    #[test]
    fn scenario_tags_round_trip() {
        assert_eq!("univariate".parse::<Scenario>().unwrap(), Scenario::Univariate);
        assert_eq!("factor".parse::<Scenario>().unwrap(), Scenario::FactorInformed);
        assert_eq!(Scenario::FactorInformed.to_string(), "factor");
        assert!("nope".parse::<Scenario>().is_err());
    }
}
