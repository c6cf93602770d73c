//! Moment estimation from return matrices.

use crate::linalg::sym_eigenvalues;
use crate::marketdata::ReturnsMatrix;
use crate::num::Scalar;
use crate::stats::{column_means, sample_covariance};

use super::{MomentModel, OptimizerError};

/// Column sample means and unbiased sample covariance.
///
/// When the smallest covariance eigenvalue is below 1e-10 a ridge
/// `delta * I` with `delta = 1e-10 - lambda_min` restores positive
/// semidefiniteness; the shift is recorded on the model.
pub fn estimate_moments<F: Scalar>(
    r: &ReturnsMatrix<F>,
) -> Result<MomentModel<F>, OptimizerError> {
    let t = r.periods();
    let n = r.assets();
    if t < 2 {
        return Err(OptimizerError::TooFewRows(t));
    }
    let underdetermined = t < n + 1;
    if underdetermined {
        log::warn!(
            "covariance from {t} rows over {n} assets is rank-deficient; \
             estimates are advisory"
        );
    }
    let mu = column_means(r.values());
    let mut q = sample_covariance(r.values());
    let floor = F::of(1e-10);
    let lambda_min = sym_eigenvalues(&q)
        .into_iter()
        .last()
        .unwrap_or_else(F::zero);
    let ridge = if lambda_min < floor {
        let delta = floor - lambda_min;
        for i in 0..n {
            q[(i, i)] = q[(i, i)] + delta;
        }
        log::warn!(
            "covariance smallest eigenvalue {:e} below 1e-10; applied ridge {:e}",
            lambda_min.to64(),
            delta.to64()
        );
        Some(delta)
    } else {
        None
    };
    Ok(MomentModel {
        tickers: r.tickers().to_vec(),
        mu,
        q,
        ridge,
        underdetermined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::marketdata::ReturnsMatrix;
    use crate::symbol::Symbol;
    use chrono::NaiveDate;

    fn matrix(cols: &[&[f64]]) -> ReturnsMatrix<f64> {
        let t = cols[0].len();
        let tickers: Vec<Symbol> = (0..cols.len())
            .map(|i| Symbol::new(&format!("T{i}")))
            .collect();
        let dates: Vec<NaiveDate> = (0..t)
            .map(|i| {
                NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(i as u64)
            })
            .collect();
        let values = Mat::from_fn(t, cols.len(), |i, j| cols[j][i]);
        ReturnsMatrix::new(tickers, dates, values).unwrap()
    }

    #[test]
    fn single_column_hand_arithmetic() {
        let r = matrix(&[&[0.01, 0.03]]);
        let m = estimate_moments(&r).unwrap();
        assert!((m.mu[0] - 0.02).abs() < 1e-18);
        assert!((m.q[(0, 0)] - 2e-4).abs() < 1e-18);
        assert!(m.ridge.is_none());
    }

    #[test]
    fn identical_columns_get_ridge() {
        let r = matrix(&[&[0.01, 0.03, -0.02], &[0.01, 0.03, -0.02]]);
        let m = estimate_moments(&r).unwrap();
        let delta = m.ridge.expect("rank-1 covariance needs a ridge");
        assert!(delta > 0.0);
        let eig = sym_eigenvalues(&m.q);
        assert!(*eig.last().unwrap() >= 1e-10 - 1e-24);
    }

    #[test]
    fn too_few_rows_rejected() {
        let r = matrix(&[&[0.01]]);
        assert!(matches!(
            estimate_moments(&r),
            Err(OptimizerError::TooFewRows(1))
        ));
    }

    #[test]
    fn monte_carlo_diagonal_covariance() {
        // seeded normal draws with known diagonal covariance; the sample
        // estimate must land within three standard errors of the truth
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = 4000usize;
        let sig = [0.01f64, 0.02, 0.03];
        let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(t)).collect();
        for _ in 0..t {
            for (col, s) in cols.iter_mut().zip(&sig) {
                // Box-Muller from two uniforms
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                col.push(s * z);
            }
        }
        let slices: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let r = matrix(&slices);
        let m = estimate_moments(&r).unwrap();
        for (j, s) in sig.iter().enumerate() {
            let truth = s * s;
            // var of sample variance for normal data: 2 sigma^4 / (T-1)
            let se = (2.0 * truth * truth / (t as f64 - 1.0)).sqrt();
            assert!(
                (m.q[(j, j)] - truth).abs() < 3.0 * se,
                "column {j}: {} vs {truth} (se {se})",
                m.q[(j, j)]
            );
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let se = (sig[i] * sig[i] * sig[j] * sig[j] / (t as f64 - 1.0)).sqrt();
                assert!(m.q[(i, j)].abs() < 3.0 * se);
            }
        }
    }
}
