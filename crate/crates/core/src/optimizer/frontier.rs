//! Efficient-frontier tracing and portfolio extraction.

use crate::num::Scalar;
use crate::portfolio::{Portfolio, PortfolioKind, WeightBounds};

use super::qp::{max_return_weights, solve_qp};
use super::{EfficientFrontier, FrontierPoint, MomentModel, OptimizerError};

/// Trace the frontier on a linear ε grid from the minimum-variance
/// return to the maximum attainable return, inclusive. Solves are
/// warm-started along the grid; per-point Sharpe uses `rf_per_period`.
pub fn trace_frontier<F: Scalar>(
    m: &MomentModel<F>,
    b: &WeightBounds<F>,
    num_points: usize,
    rf_per_period: F,
) -> Result<EfficientFrontier<F>, OptimizerError> {
    if num_points < 2 {
        return Err(OptimizerError::InvalidArgument("num_points must be >= 2"));
    }
    let mvp = solve_qp(m, None, b, None)?;
    let r_lo = m.expected_return(&mvp.weights);
    let w_hi = max_return_weights(m, b)?;
    let r_hi = m.expected_return(&w_hi).max(r_lo);

    let steps = F::of_usize(num_points - 1);
    let mut points = Vec::with_capacity(num_points);
    let mut warm = mvp.weights.clone();
    for k in 0..num_points {
        let frac = F::of_usize(k) / steps;
        let epsilon = r_lo + (r_hi - r_lo) * frac;
        let sol = if k == 0 {
            mvp.clone()
        } else {
            solve_qp(m, Some(epsilon), b, Some(&warm))?
        };
        warm = sol.weights.clone();
        let expected_return = m.expected_return(&sol.weights);
        let variance = m.variance(&sol.weights);
        let sharpe = (expected_return - rf_per_period) / variance.max(F::zero()).sqrt();
        points.push(FrontierPoint {
            epsilon,
            weights: sol.weights,
            expected_return,
            variance,
            sharpe,
        });
    }
    Ok(EfficientFrontier {
        tickers: m.tickers.clone(),
        bounds: *b,
        points,
    })
}

/// The (MVP, MERP, MSRP) triple drawn from a frontier.
pub type OptimizedPortfolios<F> = (Portfolio<F>, Portfolio<F>, Portfolio<F>);

/// Extract the minimum-variance, maximum-return, and maximum-Sharpe
/// portfolios from a traced frontier. MVP is the first point, MERP the
/// last, MSRP the Sharpe argmax with ties resolved toward lower variance.
pub fn pick_portfolios<F: Scalar>(
    frontier: &EfficientFrontier<F>,
    model_id: &str,
    sector_name: &str,
) -> Result<OptimizedPortfolios<F>, OptimizerError> {
    let first = frontier
        .points
        .first()
        .ok_or(OptimizerError::InvalidArgument("empty frontier"))?;
    let last = frontier.points.last().expect("non-empty after first()");
    let mut best = first;
    for p in &frontier.points {
        if p.sharpe > best.sharpe || (p.sharpe == best.sharpe && p.variance < best.variance) {
            best = p;
        }
    }
    let build = |kind: PortfolioKind, point: &FrontierPoint<F>| {
        Portfolio::new(
            kind,
            model_id,
            sector_name,
            frontier.tickers.clone(),
            point.weights.clone(),
        )
        .map_err(OptimizerError::from)
    };
    Ok((
        build(PortfolioKind::MinVariance, first)?,
        build(PortfolioKind::MaxReturn, last)?,
        build(PortfolioKind::MaxSharpe, best)?,
    ))
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

    fn three_asset() -> MomentModel<f64> {
        let q = Mat::from_rows(&[
            vec![4e-4, 1e-4, 0.0],
            vec![1e-4, 3e-4, 5e-5],
            vec![0.0, 5e-5, 2e-4],
        ]);
        model(vec![0.001, 0.003, 0.002], q)
    }

    #[test]
    fn two_point_frontier_hits_endpoints() {
        let m = three_asset();
        let b = weight_bounds(3).unwrap();
        let f = trace_frontier(&m, &b, 2, 0.0).unwrap();
        assert_eq!(f.points.len(), 2);

        let mvp = solve_qp(&m, None, &b, None).unwrap();
        for (a, c) in f.points[0].weights.iter().zip(&mvp.weights) {
            assert!((a - c).abs() < 1e-10);
        }
        let w_hi = max_return_weights(&m, &b).unwrap();
        let r_hi: f64 = m.expected_return(&w_hi);
        assert!((f.points[1].expected_return - r_hi).abs() < 1e-10);
    }

    #[test]
    fn frontier_is_monotone() {
        let m = three_asset();
        let b = weight_bounds(3).unwrap();
        let f = trace_frontier(&m, &b, 25, 0.0).unwrap();
        for pair in f.points.windows(2) {
            assert!(pair[1].variance >= pair[0].variance - 1e-12);
            assert!(pair[1].expected_return >= pair[0].expected_return - 1e-12);
        }
    }

    #[test]
    fn picks_satisfy_roles() {
        let m = three_asset();
        let b = weight_bounds(3).unwrap();
        let f = trace_frontier(&m, &b, 25, 0.0).unwrap();
        let (mvp, merp, msrp) = pick_portfolios(&f, "m", "s").unwrap();
        assert_eq!(mvp.kind, PortfolioKind::MinVariance);
        assert_eq!(merp.kind, PortfolioKind::MaxReturn);
        assert_eq!(msrp.kind, PortfolioKind::MaxSharpe);
        let sharpe_first = f.points.first().unwrap().sharpe;
        let sharpe_last = f.points.last().unwrap().sharpe;
        let best = f.points.iter().map(|p| p.sharpe).fold(f64::MIN, f64::max);
        assert!(best >= sharpe_first.max(sharpe_last) - 1e-9);
    }

    #[test]
    fn single_point_equivalence_when_degenerate() {
        // equal mu: frontier is a single point repeated across the grid
        let m = model(vec![0.01; 3], Mat::identity(3));
        let b = weight_bounds(3).unwrap();
        let f = trace_frontier(&m, &b, 5, 0.0).unwrap();
        for p in &f.points {
            for (a, c) in p.weights.iter().zip(&f.points[0].weights) {
                assert!((a - c).abs() < 1e-10);
            }
        }
        let (mvp, merp, msrp) = pick_portfolios(&f, "m", "s").unwrap();
        assert_eq!(mvp.weights(), merp.weights());
        assert_eq!(mvp.weights(), msrp.weights());
    }

    #[test]
    fn monotone_sharpe_makes_msrp_the_merp() {
        // single risky spread with rf 0 and increasing mu dominance:
        // construct so sharpe increases along the frontier
        let q = Mat::from_rows(&[vec![1e-4, 0.0], vec![0.0, 1e-4]]);
        let m = model(vec![0.0, 0.01], q);
        let b = WeightBounds {
            lower: 0.0,
            upper: 1.0,
            n: 2,
        };
        let f = trace_frontier(&m, &b, 10, 0.0).unwrap();
        let (_, merp, msrp) = pick_portfolios(&f, "m", "s").unwrap();
        assert_eq!(merp.weights(), msrp.weights());
    }
}
