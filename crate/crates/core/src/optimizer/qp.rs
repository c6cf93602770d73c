//! Primal active-set solver for the bounded minimum-variance program
//!
//! ```text
//!     minimize    wᵀ Q w
//!     subject to  μᵀ w >= ε        (optional)
//!                 Σ w_i = 1
//!                 l <= w_i <= u
//! ```
//!
//! The working set tracks which box bounds and whether the return
//! constraint are held as equalities. Each iteration solves the
//! equality-constrained subproblem through its KKT system, steps to the
//! nearest blocking constraint, and drops constraints with negative
//! multipliers at stationary points.

use crate::linalg::{lu_solve, Mat};
use crate::num::Scalar;
use crate::portfolio::WeightBounds;

use super::{KktReport, MomentModel, OptimizerError, QpSolution};

/// Maximize `μᵀw` over the box-and-sum polytope.
///
/// Every weight starts at the lower bound; the remaining mass is handed
/// out in descending-μ order (ties by index) up to the upper bound, with
/// one fractional pivot. When all expected returns are equal the
/// objective is constant and the equal-weight point is returned.
pub fn max_return_weights<F: Scalar>(
    m: &MomentModel<F>,
    b: &WeightBounds<F>,
) -> Result<Vec<F>, OptimizerError> {
    let n = m.assets();
    check_bounds(n, b)?;
    let spread = mu_spread(&m.mu);
    if spread <= mu_tol(&m.mu) {
        return Ok(vec![F::one() / F::of_usize(n); n]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &bi| {
        m.mu[bi]
            .partial_cmp(&m.mu[a])
            .expect("finite mu")
            .then(a.cmp(&bi))
    });
    let mut w = vec![b.lower; n];
    let mut budget = F::one() - F::of_usize(n) * b.lower;
    let cap = b.upper - b.lower;
    for idx in order {
        if budget <= F::zero() {
            break;
        }
        let add = cap.min(budget);
        w[idx] = w[idx] + add;
        budget = budget - add;
    }
    if budget > F::of(1e-9) {
        return Err(OptimizerError::Infeasible(format!(
            "bounds cannot absorb full weight (residual {budget})"
        )));
    }
    Ok(w)
}

/// Minimize `wᵀQw` subject to `μᵀw >= epsilon`, the budget constraint,
/// and the box bounds.
pub fn solve_min_variance<F: Scalar>(
    m: &MomentModel<F>,
    epsilon: F,
    b: &WeightBounds<F>,
) -> Result<QpSolution<F>, OptimizerError> {
    solve_qp(m, Some(epsilon), b, None)
}

/// Full-control entry point: `epsilon = None` drops the return
/// constraint (the unconstrained-by-ε minimum-variance point) and `warm`
/// seeds the active set from a previous solution.
pub fn solve_qp<F: Scalar>(
    m: &MomentModel<F>,
    epsilon: Option<F>,
    b: &WeightBounds<F>,
    warm: Option<&[F]>,
) -> Result<QpSolution<F>, OptimizerError> {
    let n = m.assets();
    check_bounds(n, b)?;
    if m.mu.len() != n || m.q.nrows() != n || m.q.ncols() != n {
        return Err(OptimizerError::DimensionMismatch {
            expected: n,
            got: m.mu.len(),
        });
    }

    // an all-equal μ makes the return constraint degenerate: μᵀw is the
    // same for every feasible w, so it is either trivially satisfied or
    // the program is infeasible
    let degenerate_mu = mu_spread(&m.mu) <= mu_tol(&m.mu);
    let (has_ret, eps_eff) = match epsilon {
        None => (false, F::zero()),
        Some(eps) => {
            let w_hi = max_return_weights(m, b)?;
            let r_hi = m.expected_return(&w_hi);
            let grace = (F::one() + r_hi.abs()) * (F::of(1e-9) + F::epsilon() * F::of(16.0));
            if eps > r_hi + grace {
                return Err(OptimizerError::Infeasible(format!(
                    "target return {eps} exceeds bounded maximum {r_hi}"
                )));
            }
            if degenerate_mu {
                (false, F::zero())
            } else {
                (true, eps.min(r_hi))
            }
        }
    };

    let mut w = initial_point(m, b, has_ret.then_some(eps_eff), warm)?;
    let act_tol = (F::one() + b.upper.abs()) * F::epsilon() * F::of(16.0);
    let mut at_lower: Vec<bool> = w.iter().map(|&wi| wi - b.lower <= act_tol).collect();
    let mut at_upper: Vec<bool> = w.iter().map(|&wi| b.upper - wi <= act_tol).collect();
    for (lo, up) in at_lower.iter_mut().zip(&at_upper) {
        if *lo && *up {
            *lo = false;
        }
    }
    let ret_gap = if has_ret {
        m.expected_return(&w) - eps_eff
    } else {
        F::zero()
    };
    let mut ret_active = has_ret && ret_gap.abs() <= mu_tol(&m.mu);

    let max_iter = 100 + 50 * n;
    let mut iterations = 0usize;
    let d_tol = F::epsilon() * F::of(256.0);

    let (nu, lambda) = loop {
        if iterations >= max_iter {
            return Err(OptimizerError::NumericalFailure(format!(
                "active-set stall after {iterations} iterations"
            )));
        }
        iterations += 1;

        let g = m.gradient(&w);
        let free: Vec<usize> = (0..n).filter(|&i| !at_lower[i] && !at_upper[i]).collect();
        let nf = free.len();

        if nf == 0 {
            // fully pinned point: pick the budget multiplier minimizing
            // bound-multiplier violations (λ plays no role here)
            let lo_min = (0..n)
                .filter(|&i| at_lower[i])
                .map(|i| g[i])
                .fold(F::infinity(), F::min);
            let up_max = (0..n)
                .filter(|&i| at_upper[i])
                .map(|i| g[i])
                .fold(F::neg_infinity(), F::max);
            let nu = match (lo_min.is_finite(), up_max.is_finite()) {
                (true, true) => (lo_min + up_max) / F::of(2.0),
                (true, false) => lo_min,
                (false, true) => up_max,
                (false, false) => F::zero(),
            };
            match most_negative_multiplier(
                &g, &m.mu, &at_lower, &at_upper, nu, F::zero(), ret_active,
            ) {
                Some((Dropped::Lower(i), _)) => at_lower[i] = false,
                Some((Dropped::Upper(i), _)) => at_upper[i] = false,
                Some((Dropped::Return, _)) => ret_active = false,
                None => break (nu, F::zero()),
            }
            continue;
        }

        // KKT system over the free coordinates:
        //   [2Q_FF  -1  -μ_F] [d_F]   [-g_F + corrections]
        //   [1ᵀ      0    0 ] [ν  ] = [1 - Σw]
        //   [μ_Fᵀ    0    0 ] [λ  ]   [ε - μᵀw]
        let rows = nf + 1 + usize::from(ret_active);
        let mut kkt = Mat::zeros(rows, rows);
        let mut rhs = vec![F::zero(); rows];
        for (a, &i) in free.iter().enumerate() {
            for (bj, &j) in free.iter().enumerate() {
                kkt[(a, bj)] = F::of(2.0) * m.q[(i, j)];
            }
            kkt[(a, nf)] = -F::one();
            if ret_active {
                kkt[(a, nf + 1)] = -m.mu[i];
            }
            rhs[a] = -g[i];
        }
        for (bj, _) in free.iter().enumerate() {
            kkt[(nf, bj)] = F::one();
        }
        let sum_w = w.iter().copied().fold(F::zero(), |a, b| a + b);
        rhs[nf] = F::one() - sum_w;
        if ret_active {
            for (bj, &j) in free.iter().enumerate() {
                kkt[(nf + 1, bj)] = m.mu[j];
            }
            rhs[nf + 1] = eps_eff - m.expected_return(&w);
        }

        let sol = match lu_solve(&kkt, &rhs) {
            Some(sol) => sol,
            None if ret_active => {
                // return constraint linearly dependent on the budget row
                // over the current free set; release it and let the step
                // logic re-block if needed
                ret_active = false;
                continue;
            }
            None => {
                return Err(OptimizerError::NumericalFailure(
                    "singular KKT system".into(),
                ))
            }
        };
        let mut d = vec![F::zero(); n];
        for (a, &i) in free.iter().enumerate() {
            d[i] = sol[a];
        }
        let nu = sol[nf];
        let lambda = if ret_active { sol[nf + 1] } else { F::zero() };

        let w_scale = F::one() + w.iter().fold(F::zero(), |a, &b| a.max(b.abs()));
        let d_norm = d.iter().fold(F::zero(), |a, &b| a.max(b.abs()));
        if d_norm <= d_tol * w_scale {
            match most_negative_multiplier(&g, &m.mu, &at_lower, &at_upper, nu, lambda, ret_active)
            {
                Some((Dropped::Lower(i), _)) => at_lower[i] = false,
                Some((Dropped::Upper(i), _)) => at_upper[i] = false,
                Some((Dropped::Return, _)) => ret_active = false,
                None => break (nu, lambda),
            }
            continue;
        }

        // longest feasible step toward the subproblem minimizer
        let mut alpha = F::one();
        let mut blocker: Option<Dropped> = None;
        let d_tiny = F::epsilon() * d_norm;
        for &i in &free {
            if d[i] < -d_tiny {
                let limit = (b.lower - w[i]) / d[i];
                if limit < alpha {
                    alpha = limit;
                    blocker = Some(Dropped::Lower(i));
                }
            } else if d[i] > d_tiny {
                let limit = (b.upper - w[i]) / d[i];
                if limit < alpha {
                    alpha = limit;
                    blocker = Some(Dropped::Upper(i));
                }
            }
        }
        if has_ret && !ret_active {
            let rd = m.mu.iter().zip(&d).fold(F::zero(), |a, (&mi, &di)| a + mi * di);
            if rd < -d_tiny {
                let slack = m.expected_return(&w) - eps_eff;
                let limit = (slack / -rd).max(F::zero());
                if limit < alpha {
                    alpha = limit;
                    blocker = Some(Dropped::Return);
                }
            }
        }
        alpha = alpha.max(F::zero());
        for &i in &free {
            w[i] = w[i] + alpha * d[i];
        }
        match blocker {
            Some(Dropped::Lower(i)) => {
                w[i] = b.lower;
                at_lower[i] = true;
            }
            Some(Dropped::Upper(i)) => {
                w[i] = b.upper;
                at_upper[i] = true;
            }
            Some(Dropped::Return) => ret_active = true,
            None => {}
        }
    };

    for wi in &mut w {
        *wi = wi.max(b.lower).min(b.upper);
    }
    let kkt = kkt_report(
        m,
        b,
        &w,
        has_ret.then_some(eps_eff),
        &at_lower,
        &at_upper,
        nu,
        lambda,
        iterations,
    );
    Ok(QpSolution { weights: w, kkt })
}

enum Dropped {
    Lower(usize),
    Upper(usize),
    Return,
}

/// Most negative KKT multiplier among held constraints, if any violates
/// dual feasibility.
fn most_negative_multiplier<F: Scalar>(
    g: &[F],
    mu: &[F],
    at_lower: &[bool],
    at_upper: &[bool],
    nu: F,
    lambda: F,
    ret_active: bool,
) -> Option<(Dropped, F)> {
    let scale = F::one() + g.iter().fold(F::zero(), |a, &b| a.max(b.abs()));
    let tol = scale * F::epsilon() * F::of(1024.0);
    let mut worst: Option<(Dropped, F)> = None;
    let mut consider = |cand: Dropped, value: F| {
        if value < -tol && worst.as_ref().is_none_or(|(_, v)| value < *v) {
            worst = Some((cand, value));
        }
    };
    for i in 0..g.len() {
        let eta = g[i] - nu - lambda * mu[i];
        if at_lower[i] {
            consider(Dropped::Lower(i), eta);
        } else if at_upper[i] {
            consider(Dropped::Upper(i), -eta);
        }
    }
    if ret_active {
        consider(Dropped::Return, lambda);
    }
    worst
}

fn check_bounds<F: Scalar>(n: usize, b: &WeightBounds<F>) -> Result<(), OptimizerError> {
    if b.n != n {
        return Err(OptimizerError::DimensionMismatch {
            expected: n,
            got: b.n,
        });
    }
    let nf = F::of_usize(n);
    let tol = F::epsilon() * F::of_usize(4 * n.max(1));
    if b.lower > b.upper || nf * b.lower > F::one() + tol || nf * b.upper < F::one() - tol {
        return Err(OptimizerError::Infeasible(format!(
            "bounds [{}, {}] cannot hold a unit budget over {n} assets",
            b.lower, b.upper
        )));
    }
    Ok(())
}

fn mu_spread<F: Scalar>(mu: &[F]) -> F {
    let hi = mu.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let lo = mu.iter().fold(F::infinity(), |a, &b| a.min(b));
    hi - lo
}

fn mu_tol<F: Scalar>(mu: &[F]) -> F {
    let scale = mu.iter().fold(F::zero(), |a, &b| a.max(b.abs()));
    (F::one() + scale) * F::epsilon() * F::of(64.0)
}

/// A feasible starting point: the warm start (or equal weight), blended
/// toward the maximum-return vertex when the return target demands it.
fn initial_point<F: Scalar>(
    m: &MomentModel<F>,
    b: &WeightBounds<F>,
    epsilon: Option<F>,
    warm: Option<&[F]>,
) -> Result<Vec<F>, OptimizerError> {
    let n = m.assets();
    let mut w = match warm {
        Some(prev) if prev.len() == n => {
            let mut w: Vec<F> = prev
                .iter()
                .map(|&x| x.max(b.lower).min(b.upper))
                .collect();
            let sum = w.iter().copied().fold(F::zero(), |a, v| a + v);
            if (sum - F::one()).abs() > F::of(1e-6) {
                w = vec![F::one() / F::of_usize(n); n];
            }
            w
        }
        _ => vec![F::one() / F::of_usize(n); n],
    };
    if let Some(eps) = epsilon {
        let r0 = m.expected_return(&w);
        if r0 < eps {
            let w_hi = max_return_weights(m, b)?;
            let r_hi = m.expected_return(&w_hi);
            let denom = r_hi - r0;
            let t = if denom <= F::zero() {
                F::one()
            } else {
                ((eps - r0) / denom).min(F::one())
            };
            for (wi, &hi) in w.iter_mut().zip(&w_hi) {
                *wi = (F::one() - t) * *wi + t * hi;
            }
        }
    }
    Ok(w)
}

#[allow(clippy::too_many_arguments)]
fn kkt_report<F: Scalar>(
    m: &MomentModel<F>,
    b: &WeightBounds<F>,
    w: &[F],
    epsilon: Option<F>,
    at_lower: &[bool],
    at_upper: &[bool],
    nu: F,
    lambda: F,
    iterations: usize,
) -> KktReport<F> {
    let sum_w = w.iter().copied().fold(F::zero(), |a, v| a + v);
    let sum_residual = (sum_w - F::one()).abs();
    let max_bound_violation = w.iter().fold(F::zero(), |acc, &wi| {
        acc.max(b.lower - wi).max(wi - b.upper)
    });
    let return_violation = epsilon
        .map(|eps| (eps - m.expected_return(w)).max(F::zero()))
        .unwrap_or_else(F::zero);
    let g = m.gradient(w);
    let mut sq = F::zero();
    for i in 0..w.len() {
        let eta = g[i] - nu - lambda * m.mu[i];
        let contribution = if at_lower[i] {
            eta.min(F::zero())
        } else if at_upper[i] {
            (-eta).min(F::zero())
        } else {
            eta
        };
        sq = sq + contribution * contribution;
    }
    sq = sq + lambda.min(F::zero()) * lambda.min(F::zero());
    KktReport {
        sum_residual,
        max_bound_violation,
        return_violation,
        projected_gradient_norm: sq.sqrt(),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::portfolio::weight_bounds;
    use crate::symbol::Symbol;

    fn model(mu: Vec<f64>, q: Mat<f64>) -> MomentModel<f64> {
        let tickers = (0..mu.len())
            .map(|i| Symbol::new(&format!("T{i}")))
            .collect();
        MomentModel {
            tickers,
            mu,
            q,
            ridge: None,
            underdetermined: false,
        }
    }

    fn bounds(n: usize, lower: f64, upper: f64) -> WeightBounds<f64> {
        WeightBounds { lower, upper, n }
    }

    #[test]
    fn symmetric_two_asset_minimum() {
        let m = model(vec![0.0, 0.0], Mat::identity(2));
        let sol = solve_min_variance(&m, 0.0, &bounds(2, 0.0, 1.0)).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-12);
        assert!((sol.weights[1] - 0.5).abs() < 1e-12);
        assert!(sol.kkt.projected_gradient_norm < 1e-9);
    }

    #[test]
    fn return_target_forces_corner() {
        let m = model(vec![0.01, 0.02], Mat::identity(2));
        let sol = solve_min_variance(&m, 0.02, &bounds(2, 0.0, 1.0)).unwrap();
        assert!(sol.weights[0].abs() < 1e-9);
        assert!((sol.weights[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_target_is_rejected() {
        let m = model(vec![0.01, 0.02], Mat::identity(2));
        let err = solve_min_variance(&m, 0.05, &bounds(2, 0.0, 1.0)).unwrap_err();
        assert!(matches!(err, OptimizerError::Infeasible(_)));
    }

    #[test]
    fn inconsistent_bounds_are_rejected() {
        let m = model(vec![0.01, 0.02], Mat::identity(2));
        let err = solve_min_variance(&m, 0.0, &bounds(2, 0.6, 1.0)).unwrap_err();
        assert!(matches!(err, OptimizerError::Infeasible(_)));
        let err = solve_min_variance(&m, 0.0, &bounds(2, 0.0, 0.4)).unwrap_err();
        assert!(matches!(err, OptimizerError::Infeasible(_)));
    }

    #[test]
    fn greedy_max_return_corner() {
        let m = model(vec![0.02, 0.01], Mat::identity(2));
        let w = max_return_weights(&m, &bounds(2, 0.0, 1.0)).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn greedy_equal_mu_returns_equal_weight() {
        let n = 20;
        let m = model(vec![0.01; n], Mat::identity(n));
        let w = max_return_weights(&m, &weight_bounds(n).unwrap()).unwrap();
        assert!(w.iter().all(|&wi| (wi - 0.05).abs() < 1e-15));
    }

    #[test]
    fn greedy_pivot_allocation() {
        // spec'd instance: n=5, bounds (0.1, 0.4), mu descending;
        // budget 0.5 on top of lower bounds gives (0.4, 0.3, 0.1, 0.1, 0.1)
        let mu: Vec<f64> = vec![5e-3, 4e-3, 3e-3, 2e-3, 1e-3];
        let m = model(mu.clone(), Mat::identity(5));
        let b = bounds(5, 0.1, 0.4);
        let w = max_return_weights(&m, &b).unwrap();
        let expect = [0.4, 0.3, 0.1, 0.1, 0.1];
        for (wi, ei) in w.iter().zip(expect) {
            assert!((wi - ei).abs() < 1e-12, "{w:?}");
        }

        // oracle: enumerate every vertex of the box-simplex (at most one
        // fractional coordinate) and confirm the greedy value is maximal
        let best = enumerate_vertices_max(&mu, 0.1, 0.4);
        let got: f64 = mu.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((got - best).abs() < 1e-12);
    }

    /// LP vertex enumeration: choose subsets at upper/lower bound with
    /// one fractional pivot; feasible vertices of {Σw=1, l<=w<=u}.
    fn enumerate_vertices_max(mu: &[f64], l: f64, u: f64) -> f64 {
        let n = mu.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 0..(3u32.pow(n as u32)) {
            let mut rem = mask;
            let mut sum = 0.0;
            let mut pivot = None;
            let mut ok = true;
            for (i, &_m) in mu.iter().enumerate() {
                match rem % 3 {
                    0 => sum += l,
                    1 => sum += u,
                    _ => {
                        if pivot.is_some() {
                            ok = false;
                            break;
                        }
                        pivot = Some(i);
                    }
                }
                rem /= 3;
            }
            if !ok {
                continue;
            }
            let w_pivot = 1.0 - sum;
            if let Some(p) = pivot {
                if !(l - 1e-12..=u + 1e-12).contains(&w_pivot) {
                    continue;
                }
                let mut rem2 = mask;
                let mut val = 0.0;
                for (i, &mi) in mu.iter().enumerate() {
                    let wi = match rem2 % 3 {
                        0 => l,
                        1 => u,
                        _ => w_pivot,
                    };
                    let _ = i;
                    val += mi * wi;
                    rem2 /= 3;
                }
                let _ = p;
                best = best.max(val);
            } else if (sum - 1.0).abs() < 1e-12 {
                let mut rem2 = mask;
                let mut val = 0.0;
                for &mi in mu {
                    let wi = if rem2 % 3 == 0 { l } else { u };
                    val += mi * wi;
                    rem2 /= 3;
                }
                best = best.max(val);
            }
        }
        best
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let q = Mat::from_rows(&[
            vec![4e-4, 1e-4, 0.0],
            vec![1e-4, 3e-4, 5e-5],
            vec![0.0, 5e-5, 2e-4],
        ]);
        let m = model(vec![0.001, 0.002, 0.0015], q);
        let b = weight_bounds(3).unwrap();
        let cold = solve_qp(&m, Some(0.0016), &b, None).unwrap();
        let warm_seed = solve_qp(&m, Some(0.0012), &b, None).unwrap();
        let warm = solve_qp(&m, Some(0.0016), &b, Some(&warm_seed.weights)).unwrap();
        for (a, c) in warm.weights.iter().zip(&cold.weights) {
            assert!((a - c).abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_q_leaves_argmin_unchanged() {
        let q = Mat::from_rows(&[
            vec![5e-4, 1e-4, 2e-5],
            vec![1e-4, 4e-4, 1e-5],
            vec![2e-5, 1e-5, 6e-4],
        ]);
        let m1 = model(vec![0.001, 0.003, 0.002], q.clone());
        let mut q10 = q;
        for i in 0..3 {
            for j in 0..3 {
                q10[(i, j)] *= 10.0;
            }
        }
        let m10 = model(vec![0.001, 0.003, 0.002], q10);
        let b = weight_bounds(3).unwrap();
        let s1 = solve_qp(&m1, Some(0.002), &b, None).unwrap();
        let s10 = solve_qp(&m10, Some(0.002), &b, None).unwrap();
        for (a, c) in s1.weights.iter().zip(&s10.weights) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn solution_is_feasible_and_stationary() {
        let q = Mat::from_rows(&[
            vec![6e-4, 2e-4, 1e-4, 0.0],
            vec![2e-4, 5e-4, 1e-4, 5e-5],
            vec![1e-4, 1e-4, 7e-4, 2e-4],
            vec![0.0, 5e-5, 2e-4, 4e-4],
        ]);
        let m = model(vec![0.002, 0.001, 0.003, 0.0015], q);
        let b = weight_bounds(4).unwrap();
        let sol = solve_qp(&m, Some(0.002), &b, None).unwrap();
        assert!(sol.kkt.sum_residual < 1e-9);
        assert!(sol.kkt.max_bound_violation < 1e-9);
        assert!(sol.kkt.return_violation < 1e-9);
        assert!(sol.kkt.projected_gradient_norm < 1e-6);
    }

    #[test]
    fn f32_instantiation_solves() {
        let q = Mat::from_rows(&[vec![2.0f32, 0.0], vec![0.0, 1.0]]);
        let m = MomentModel {
            tickers: vec![Symbol::new("A"), Symbol::new("B")],
            mu: vec![0.0f32, 0.0],
            q,
            ridge: None,
            underdetermined: false,
        };
        let b = WeightBounds {
            lower: 0.0f32,
            upper: 1.0,
            n: 2,
        };
        let sol = solve_qp(&m, None, &b, None).unwrap();
        // minimize 2x^2 + y^2 with x + y = 1: x = 1/3, y = 2/3
        assert!((sol.weights[0] - 1.0 / 3.0).abs() < 1e-5);
        assert!((sol.weights[1] - 2.0 / 3.0).abs() < 1e-5);
    }
}
