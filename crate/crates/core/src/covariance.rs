//! Covariance estimators for base forecast errors.
//!
//! Errors are stored as a `N x m` block, one row per forecast origin. All
//! estimators work with raw second moments, `W = E'E / N`, without
//! subtracting the column means: forecast errors are treated as mean zero,
//! and a biased forecast should show up in the loss rather than be absorbed
//! into the estimate.
//!
//! The shrinkage estimator pulls the sample matrix toward its own diagonal,
//! `W_shr = delta * diag(W) + (1 - delta) * W`, with the analytic intensity
//! that minimizes estimated risk on the correlation scale:
//!
//! ```text
//! delta = sum of estimated variances of the sample correlations
//!         / sum of squared sample correlations            (off-diagonals)
//! ```
//!
//! clamped to [0, 1]. With one series, or when every off-diagonal
//! correlation is exactly zero, the target equals the sample matrix and the
//! intensity is irrelevant; `delta = 1` is reported.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CovEstimator {
    Sample,
    Diagonal,
    Shrinkage,
}

/// An estimated error covariance for one forecast horizon.
#[derive(Debug, Clone)]
pub struct ErrorCovariance {
    pub w: DMatrix<f64>,
    pub estimator: CovEstimator,
    pub horizon: usize,
    /// Number of error rows the estimate was computed from.
    pub sample_size: usize,
    /// Shrinkage intensity when `estimator` is `Shrinkage`.
    pub intensity: Option<f64>,
}

fn check_errors(errors: &DMatrix<f64>) -> Result<()> {
    if errors.nrows() == 0 || errors.ncols() == 0 {
        return Err(Error::EmptyInput("error panel is empty".into()));
    }
    Ok(())
}

/// Raw second-moment matrix `E'E / N`.
pub fn sample_cov(errors: &DMatrix<f64>, horizon: usize) -> Result<ErrorCovariance> {
    check_errors(errors)?;
    let n = errors.nrows() as f64;
    let w = errors.tr_mul(errors) / n;
    Ok(ErrorCovariance {
        w,
        estimator: CovEstimator::Sample,
        horizon,
        sample_size: errors.nrows(),
        intensity: None,
    })
}

/// Sample covariance with the off-diagonal entries zeroed: the variance
/// weighting used by scale-adjusted projection reconciliation.
pub fn diagonal_cov(errors: &DMatrix<f64>, horizon: usize) -> Result<ErrorCovariance> {
    let mut cov = sample_cov(errors, horizon)?;
    let m = cov.w.nrows();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                cov.w[(i, j)] = 0.0;
            }
        }
    }
    cov.estimator = CovEstimator::Diagonal;
    Ok(cov)
}

/// Shrinks the sample matrix toward its diagonal with the analytic intensity
/// described in the module docs. Requires at least two rows so correlation
/// variances are estimable.
pub fn shrink_cov(errors: &DMatrix<f64>, horizon: usize) -> Result<ErrorCovariance> {
    check_errors(errors)?;
    let n_rows = errors.nrows();
    if n_rows < 2 {
        return Err(Error::InsufficientData(
            "shrinkage needs at least two error rows".into(),
        ));
    }
    let m = errors.ncols();
    let n = n_rows as f64;
    let w = errors.tr_mul(errors) / n;
    for i in 0..m {
        if w[(i, i)] <= 0.0 {
            return Err(Error::ZeroVariance(format!(
                "error column {i} has zero second moment"
            )));
        }
    }

    // Standardize columns by sqrt of the diagonal, so products of columns
    // give sample correlations.
    let mut xs = errors.clone();
    for j in 0..m {
        xs.column_mut(j).scale_mut(1.0 / w[(j, j)].sqrt());
    }

    // var_hat(r_ij) = (sum_t z_ti^2 z_tj^2 - n r_ij^2) / (n (n - 1)),
    // r_ij = sum_t z_ti z_tj / n.
    let mut var_sum = 0.0;
    let mut cor_sq_sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut cross = 0.0;
            let mut fourth = 0.0;
            for t in 0..n_rows {
                let p = xs[(t, i)] * xs[(t, j)];
                cross += p;
                fourth += p * p;
            }
            let r = cross / n;
            var_sum += (fourth - n * r * r) / (n * (n - 1.0));
            cor_sq_sum += r * r;
        }
    }

    let delta = if cor_sq_sum > 0.0 {
        (var_sum / cor_sq_sum).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let mut shrunk = w.clone();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                shrunk[(i, j)] *= 1.0 - delta;
            }
        }
    }
    Ok(ErrorCovariance {
        w: shrunk,
        estimator: CovEstimator::Shrinkage,
        horizon,
        sample_size: n_rows,
        intensity: Some(delta),
    })
}

/// Dispatch on the estimator tag.
pub fn estimate(
    errors: &DMatrix<f64>,
    horizon: usize,
    estimator: CovEstimator,
) -> Result<ErrorCovariance> {
    match estimator {
        CovEstimator::Sample => sample_cov(errors, horizon),
        CovEstimator::Diagonal => diagonal_cov(errors, horizon),
        CovEstimator::Shrinkage => shrink_cov(errors, horizon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_row_hand_example() {
        // Rows (1,-1) and (1,1): cross terms cancel, W = I.
        let e = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        let cov = sample_cov(&e, 1).unwrap();
        assert_eq!(cov.w, DMatrix::identity(2, 2));
        assert_eq!(cov.sample_size, 2);
        assert_eq!(cov.horizon, 1);
    }

    #[test]
    fn matrix_product_matches_row_accumulation() {
        let e = DMatrix::from_fn(40, 3, |r, c| ((r * 7 + c * 13) % 11) as f64 - 5.0);
        let cov = sample_cov(&e, 2).unwrap();
        let n = e.nrows() as f64;
        let mut manual = DMatrix::zeros(3, 3);
        for t in 0..e.nrows() {
            let row = e.row(t).transpose();
            manual += &row * row.transpose();
        }
        manual /= n;
        assert!((&cov.w - &manual).amax() < 1e-12);
    }

    #[test]
    fn diagonal_estimator_zeroes_cross_terms() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 1.0, 2.0, 2.0]);
        let full = sample_cov(&e, 1).unwrap();
        let diag = diagonal_cov(&e, 1).unwrap();
        for i in 0..2 {
            assert_eq!(diag.w[(i, i)], full.w[(i, i)]);
        }
        assert_eq!(diag.w[(0, 1)], 0.0);
        assert_eq!(diag.w[(1, 0)], 0.0);
    }

    fn gaussian_block(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn independent_noise_shrinks_hard() {
        // True correlations are zero, so observed ones are pure noise and
        // the analytic intensity should push most of the way to the diagonal.
        let e = gaussian_block(40, 8, 42);
        let cov = shrink_cov(&e, 1).unwrap();
        let delta = cov.intensity.unwrap();
        assert!(delta > 0.5, "expected strong shrinkage, got {delta}");
        assert!((0.0..=1.0).contains(&delta));
    }

    #[test]
    fn common_factor_errors_shrink_little() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows = 400;
        let mut e = DMatrix::zeros(rows, 5);
        for t in 0..rows {
            let f: f64 = StandardNormal.sample(&mut rng);
            for j in 0..5 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                e[(t, j)] = f + 0.1 * noise;
            }
        }
        let cov = shrink_cov(&e, 1).unwrap();
        let delta = cov.intensity.unwrap();
        assert!(delta < 0.5, "expected weak shrinkage, got {delta}");
    }

    #[test]
    fn single_series_shrinkage_returns_sample_matrix() {
        let e = DMatrix::from_column_slice(6, 1, &[1.0, -2.0, 0.5, 1.5, -1.0, 2.0]);
        let cov = shrink_cov(&e, 1).unwrap();
        let sample = sample_cov(&e, 1).unwrap();
        assert_eq!(cov.w, sample.w);
        assert_eq!(cov.intensity, Some(1.0));
    }

    #[test]
    fn shrunk_matrix_stays_positive_definite() {
        // More series than rows: the sample matrix is singular, shrinkage
        // toward a positive diagonal must repair it.
        let e = gaussian_block(6, 10, 99);
        let cov = shrink_cov(&e, 1).unwrap();
        assert!(cov.intensity.unwrap() > 0.0);
        assert!(
            cov.w.clone().cholesky().is_some(),
            "shrunk matrix is not positive definite"
        );
        let asym = (&cov.w - cov.w.transpose()).amax();
        assert!(asym == 0.0);
    }

    #[test]
    fn estimator_diagnostics_round_trip() {
        let e = gaussian_block(30, 4, 3);
        for (tag, horizon) in [
            (CovEstimator::Sample, 1),
            (CovEstimator::Diagonal, 2),
            (CovEstimator::Shrinkage, 3),
        ] {
            let cov = estimate(&e, horizon, tag).unwrap();
            assert_eq!(cov.estimator, tag);
            assert_eq!(cov.horizon, horizon);
            assert_eq!(cov.sample_size, 30);
        }
    }

    #[test]
    fn empty_errors_are_rejected() {
        let e = DMatrix::<f64>::zeros(0, 3);
        assert!(matches!(
            sample_cov(&e, 1).unwrap_err(),
            Error::EmptyInput(_)
        ));
    }

    #[test]
    fn variance_of_mean_zero_gaussian_is_recovered() {
        let e = gaussian_block(20_000, 2, 11);
        let cov = sample_cov(&e, 1).unwrap();
        assert_abs_diff_eq!(cov.w[(0, 0)], 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(cov.w[(1, 1)], 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(cov.w[(0, 1)], 0.0, epsilon = 0.05);
    }
}
