//! Minimal dense linear algebra for the small systems this crate solves
//! (covariance matrices and KKT systems of a few dozen rows).

use std::ops::{Index, IndexMut};

use crate::num::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Build from row slices; panics if rows are ragged.
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// `M v` for a square or rectangular matrix.
    pub fn matvec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(F::zero(), |acc, (&m, &x)| acc + m * x)
            })
            .collect()
    }

    /// Quadratic form `wᵀ M w`.
    pub fn quad_form(&self, w: &[F]) -> F {
        let mv = self.matvec(w);
        mv.iter().zip(w).fold(F::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: F) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

impl<F> Index<(usize, usize)> for Mat<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> IndexMut<(usize, usize)> for Mat<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues of a symmetric matrix via the cyclic Jacobi method,
/// sorted descending. Eigenvectors are not accumulated.
pub fn sym_eigenvalues<F: Scalar>(m: &Mat<F>) -> Vec<F> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigenvalues of a non-square matrix");
    if n == 0 {
        return Vec::new();
    }
    let mut a = m.clone();
    // symmetrize to guard against last-ulp asymmetry from callers
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)]) / F::of(2.0);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let scale = a.max_abs();
    if scale == F::zero() {
        return vec![F::zero(); n];
    }
    let tol = scale * F::epsilon() * F::of_usize(n);
    for _sweep in 0..100 {
        let mut off = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= scale * F::epsilon() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (F::of(2.0) * apq);
                let t = {
                    let s = if theta >= F::zero() { F::one() } else { -F::one() };
                    s / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<F> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    eig
}

/// Solve `A x = b` with partial-pivot LU. Returns `None` when `A` is
/// numerically singular.
pub fn lu_solve<F: Scalar>(a: &Mat<F>, b: &[F]) -> Option<Vec<F>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut x: Vec<F> = b.to_vec();
    let scale = m.max_abs().max(F::min_positive_value());
    let tiny = scale * F::epsilon() * F::of_usize(16 * n.max(1));
    for k in 0..n {
        let mut piv = k;
        for i in (k + 1)..n {
            if m[(i, k)].abs() > m[(piv, k)].abs() {
                piv = i;
            }
        }
        if m[(piv, k)].abs() <= tiny {
            return None;
        }
        if piv != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            x.swap(k, piv);
        }
        for i in (k + 1)..n {
            let f = m[(i, k)] / m[(k, k)];
            m[(i, k)] = f;
            for j in (k + 1)..n {
                let mkj = m[(k, j)];
                m[(i, j)] = m[(i, j)] - f * mkj;
            }
            x[i] = x[i] - f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s = s - m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_identity() {
        let m: Mat<f64> = Mat::identity(5);
        let e = sym_eigenvalues(&m);
        assert_eq!(e, vec![1.0; 5]);
    }

    #[test]
    fn eigenvalues_of_diag() {
        let mut m: Mat<f64> = Mat::zeros(3, 3);
        m[(0, 0)] = 2.0;
        m[(1, 1)] = -1.0;
        m[(2, 2)] = 5.0;
        assert_eq!(sym_eigenvalues(&m), vec![5.0, 2.0, -1.0]);
    }

    #[test]
    fn eigenvalues_of_2x2() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1
        let m = Mat::from_rows(&[vec![2.0f64, 1.0], vec![1.0, 2.0]]);
        let e = sym_eigenvalues(&m);
        assert!((e[0] - 3.0).abs() < 1e-12);
        assert!((e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_rank_one() {
        let v = [1.0f64, 2.0, 3.0];
        let m = Mat::from_fn(3, 3, |i, j| v[i] * v[j]);
        let e = sym_eigenvalues(&m);
        assert!((e[0] - 14.0).abs() < 1e-10);
        assert!(e[1].abs() < 1e-10);
        assert!(e[2].abs() < 1e-10);
    }

    #[test]
    fn lu_solves_small_system() {
        let a = Mat::from_rows(&[vec![4.0f64, 1.0], vec![1.0, 3.0]]);
        let x = lu_solve(&a, &[1.0, 2.0]).unwrap();
        // exact solution (1/11, 7/11)
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn lu_detects_singular() {
        let a = Mat::from_rows(&[vec![1.0f64, 2.0], vec![2.0, 4.0]]);
        assert!(lu_solve(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn quad_form_matches_manual() {
        let a = Mat::from_rows(&[vec![2.0f64, 0.5], vec![0.5, 1.0]]);
        let w = [0.3, 0.7];
        let expect = 2.0 * 0.09 + 0.5 * 0.21 * 2.0 + 1.0 * 0.49;
        assert!((a.quad_form(&w) - expect).abs() < 1e-15);
    }
}
