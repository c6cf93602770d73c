//! Shared sample statistics. All standard deviations use the unbiased
//! (T-1) divisor.

use crate::linalg::Mat;
use crate::num::Scalar;

pub fn mean<F: Scalar>(xs: &[F]) -> F {
    assert!(!xs.is_empty(), "mean of empty slice");
    xs.iter().copied().fold(F::zero(), |a, b| a + b) / F::of_usize(xs.len())
}

/// Unbiased sample variance; zero for a single observation and exactly
/// zero for constant data.
pub fn sample_variance<F: Scalar>(xs: &[F]) -> F {
    let n = xs.len();
    if n < 2 || xs.iter().all(|&x| x == xs[0]) {
        return F::zero();
    }
    let m = mean(xs);
    let ss = xs
        .iter()
        .fold(F::zero(), |acc, &x| acc + (x - m) * (x - m));
    ss / F::of_usize(n - 1)
}

pub fn sample_std<F: Scalar>(xs: &[F]) -> F {
    sample_variance(xs).sqrt()
}

/// Column means of a T x n matrix.
pub fn column_means<F: Scalar>(m: &Mat<F>) -> Vec<F> {
    let t = m.nrows();
    assert!(t > 0, "column means of empty matrix");
    let mut means = vec![F::zero(); m.ncols()];
    for i in 0..t {
        for (j, acc) in means.iter_mut().enumerate() {
            *acc = *acc + m[(i, j)];
        }
    }
    let tf = F::of_usize(t);
    for v in &mut means {
        *v = *v / tf;
    }
    means
}

/// Unbiased sample covariance of the columns of a T x n matrix.
/// Requires T >= 2.
pub fn sample_covariance<F: Scalar>(m: &Mat<F>) -> Mat<F> {
    let t = m.nrows();
    let n = m.ncols();
    assert!(t >= 2, "covariance needs at least two rows");
    let means = column_means(m);
    let mut q = Mat::zeros(n, n);
    for r in 0..t {
        let row = m.row(r);
        for i in 0..n {
            let di = row[i] - means[i];
            for j in i..n {
                let dj = row[j] - means[j];
                q[(i, j)] = q[(i, j)] + di * dj;
            }
        }
    }
    let denom = F::of_usize(t - 1);
    for i in 0..n {
        for j in i..n {
            let v = q[(i, j)] / denom;
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    q
}
