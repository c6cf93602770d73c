//! Scalar abstraction and compensated floating-point primitives.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64` via the blanket impl below.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Convert an `f64` constant into the scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant convertible to scalar")
    }

    /// Convert a count into the scalar type.
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize convertible to scalar")
    }

    /// Widen to `f64` for formatting and export.
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Debug + Display + Send + Sync + 'static
{
}

/// Error-free transform: returns `(s, e)` with `a + b == s + e` exactly.
pub fn two_sum<F: Scalar>(a: F, b: F) -> (F, F) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free transform: returns `(p, e)` with `a * b == p + e` exactly.
/// Relies on a fused multiply-add.
pub fn two_prod<F: Scalar>(a: F, b: F) -> (F, F) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

/// Compensated dot product (Ogita-Rump-Oishi `Dot2`).
///
/// Accumulates products and rounding errors in a double-width running pair,
/// which makes the result correctly rounded for all well-scaled inputs.
pub fn dot2<F: Scalar>(x: &[F], y: &[F]) -> F {
    assert_eq!(x.len(), y.len(), "dot product of unequal lengths");
    let mut p = F::zero();
    let mut comp = F::zero();
    for (&a, &b) in x.iter().zip(y) {
        let (h, r1) = two_prod(a, b);
        let (s, r2) = two_sum(p, h);
        p = s;
        comp = comp + (r1 + r2);
    }
    p + comp
}

/// Compensated sum (Kahan-Babuska / `Sum2`).
pub fn sum2<F: Scalar>(x: &[F]) -> F {
    let mut s = F::zero();
    let mut comp = F::zero();
    for &v in x {
        let (t, e) = two_sum(s, v);
        s = t;
        comp = comp + e;
    }
    s + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sum_recovers_error() {
        let a = 1.0f64;
        let b = 1e-17f64;
        let (s, e) = two_sum(a, b);
        assert_eq!(s, 1.0);
        assert_eq!(e, 1e-17);
    }

    #[test]
    fn two_prod_recovers_error() {
        let a = 1.0f64 + 2f64.powi(-27);
        let (p, e) = two_prod(a, a);
        // a*a is not representable; p + e reconstructs it exactly in double-double
        assert!(e != 0.0);
        assert_eq!(p, a * a);
    }

    #[test]
    fn dot2_exceeds_naive_accuracy() {
        let w = vec![1.0f64 / 20.0; 20];
        assert_eq!(dot2(&w, &w), 0.05);
        let naive: f64 = w.iter().map(|x| x * x).sum();
        assert_ne!(naive, 0.05);
    }

    #[test]
    fn dot2_handles_f32() {
        let x = vec![0.25f32; 4];
        assert_eq!(dot2(&x, &x), 0.25f32);
    }

    #[test]
    fn sum2_matches_exact() {
        let xs = vec![0.1f64; 10];
        assert!((sum2(&xs) - 1.0).abs() < 1e-15);
    }
}
