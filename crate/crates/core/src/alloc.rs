//! Capacity allocation by curvature-weighted water-filling.
//!
//! Minimizes `sum_k [alpha c_k e_k - gamma q_k^beta log(1 + e_k)]` over
//! `e >= 0` subject to `sum_k c_k e_k <= B`. For a fixed dual value `lambda`
//! the minimizer is
//!
//! ```text
//! e_k(lambda) = max(gamma q_k^beta / ((alpha + lambda) c_k) - 1, 0)
//! ```
//!
//! and `lambda -> sum_k c_k e_k(lambda)` is continuous and non-increasing,
//! so the budget-binding multiplier is found by bisection in `O(K log 1/eps)`.

use crate::bisect::{bisect, refine};
use crate::error::{invalid, Result};
use crate::plan::AllocPlan;
use crate::stats::{score_power, AllocParams, LayerStats, StatsVector};

/// Stopping rule for the dual bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocSolverConfig {
    residual_tol: Option<f64>,
    max_iter: usize,
}

impl Default for AllocSolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: None,
            max_iter: 200,
        }
    }
}

impl AllocSolverConfig {
    /// Absolute tolerance on `|sum c e - B|`. Without one, `1e-9 * max(1, B)` is used.
    pub fn with_residual_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid("residual_tol", format!("must be > 0, got {tol}")));
        }
        self.residual_tol = Some(tol);
        Ok(self)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Result<Self> {
        if max_iter == 0 {
            return Err(invalid("max_iter", "must be >= 1"));
        }
        self.max_iter = max_iter;
        Ok(self)
    }

    pub fn residual_tol(&self, budget: f64) -> f64 {
        self.residual_tol.unwrap_or(1e-9 * budget.max(1.0))
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }
}

/// Benefit weights `gamma q_k^beta`.
pub fn weights(stats: &StatsVector, params: &AllocParams) -> Vec<f64> {
    stats
        .layers()
        .iter()
        .map(|l| weight(l, params))
        .collect()
}

#[inline]
fn weight(l: &LayerStats, params: &AllocParams) -> f64 {
    params.gamma() * score_power(l.q(), params.beta())
}

/// Benefit-to-cost ratio `gamma q_k^beta / c_k`; `e_k(lambda) = max(r_k / (alpha + lambda) - 1, 0)`.
#[inline]
fn ratio(l: &LayerStats, params: &AllocParams) -> f64 {
    weight(l, params) / l.cost()
}

#[inline]
fn capacity(ratio: f64, level: f64) -> f64 {
    (ratio / level - 1.0).max(0.0)
}

/// Closed-form primal minimizer for a fixed dual value.
pub fn primal_at(stats: &StatsVector, params: &AllocParams, lambda: f64) -> Vec<f64> {
    let level = params.alpha() + lambda;
    stats
        .layers()
        .iter()
        .map(|l| capacity(ratio(l, params), level))
        .collect()
}

/// `sum_k c_k e_k(lambda)`.
pub fn spend_at(stats: &StatsVector, params: &AllocParams, lambda: f64) -> f64 {
    let level = params.alpha() + lambda;
    stats
        .layers()
        .iter()
        .map(|l| l.cost() * capacity(ratio(l, params), level))
        .sum()
}

/// Smallest dual value at which every capacity is zero.
pub fn zero_level(stats: &StatsVector, params: &AllocParams) -> f64 {
    let r_max = stats
        .layers()
        .iter()
        .map(|l| ratio(l, params))
        .fold(0.0, f64::max);
    (r_max - params.alpha()).max(0.0)
}

/// Solves the allocation program.
pub fn solve(stats: &StatsVector, params: &AllocParams, cfg: &AllocSolverConfig) -> Result<AllocPlan> {
    let budget = params.budget();
    let tol = cfg.residual_tol(budget);
    let rc: Vec<(f64, f64)> = stats
        .layers()
        .iter()
        .map(|l| (ratio(l, params), l.cost()))
        .collect();
    let alpha = params.alpha();
    let free_spend: f64 = rc.iter().map(|&(rk, ck)| ck * capacity(rk, alpha)).sum();

    if free_spend <= budget {
        let e = primal_at(stats, params, 0.0);
        return AllocPlan::from_solution(stats, params, e, 0.0, 0, tol);
    }
    let hi = (rc.iter().map(|&(rk, _)| rk).fold(0.0, f64::max) - alpha).max(0.0);
    if budget == 0.0 {
        return AllocPlan::from_solution(stats, params, vec![0.0; stats.len()], hi, 0, tol);
    }
    // B - spend(lambda) is non-decreasing: negative at 0, equal to B at `hi`.
    // The evaluator tracks the bracket the same way `bisect` does; a layer
    // active at the upper end stays active on the whole bracket and one
    // inactive at the lower end stays inactive, so only the rest is rescanned.
    let mut active = rc;
    let (mut cr_sum, mut c_sum) = (0.0, 0.0);
    let (mut lo_b, mut hi_b) = (0.0, hi);
    let mut prev = (lo_b, hi_b);
    let residual = |lambda: f64| -> f64 {
        prev = (lo_b, hi_b);
        let (top, bottom) = (alpha + hi_b, alpha + lo_b);
        active.retain(|&(rk, ck)| {
            if rk >= top {
                cr_sum += ck * rk;
                c_sum += ck;
                false
            } else {
                rk > bottom
            }
        });
        let level = alpha + lambda;
        let rest: f64 = active.iter().map(|&(rk, ck)| ck * capacity(rk, level)).sum();
        let r = budget - (cr_sum / level - c_sum + rest);
        if r < 0.0 {
            lo_b = lambda;
        } else {
            hi_b = lambda;
        }
        r
    };
    let (lambda, iterations) = bisect(0.0, hi, tol, cfg.max_iter(), residual)?;
    // The folded sums cancel; recheck with a direct sum and refine if needed.
    let exact = |lambda: f64| budget - spend_at(stats, params, lambda);
    let (lambda, iterations) = refine(lambda, iterations, prev, tol, cfg.max_iter(), exact)?;
    let e = primal_at(stats, params, lambda);
    AllocPlan::from_solution(stats, params, e, lambda, iterations, tol)
}

/// Stationarity and complementary-slackness violation of `(e, lambda)`.
///
/// Active layers contribute `|(alpha + lambda) c_k - gamma q_k^beta / (1 + e_k)|`;
/// layers at zero contribute `max(0, gamma q_k^beta - (alpha + lambda) c_k)`.
pub fn kkt_residual(stats: &StatsVector, params: &AllocParams, e: &[f64], lambda: f64) -> f64 {
    let level = params.alpha() + lambda;
    stats
        .layers()
        .iter()
        .zip(e)
        .map(|(l, &ek)| {
            let w = weight(l, params);
            let marginal_cost = level * l.cost();
            if ek > 0.0 {
                (marginal_cost - w / (1.0 + ek)).abs()
            } else {
                (w - marginal_cost).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Convenience wrapper over [`kkt_residual`] for a solved plan.
pub fn plan_kkt_residual(stats: &StatsVector, params: &AllocParams, plan: &AllocPlan) -> f64 {
    kkt_residual(stats, params, plan.e(), plan.lambda())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer(budget: f64) -> (StatsVector, AllocParams) {
        (
            StatsVector::from_scores(&[0.75, 0.25]).unwrap(),
            AllocParams::new(0.5, 1.0, 1.0, budget).unwrap(),
        )
    }

    #[test]
    fn primal_single_layer_default_hyperparameters() {
        let s = StatsVector::from_scores(&[1.0]).unwrap();
        let p = AllocParams::new(0.5, 0.9, 1.0, 10.0).unwrap();
        let e = primal_at(&s, &p, 0.0);
        assert!((e[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn primal_vanishes_at_bracket() {
        let ids: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let s = StatsVector::from_parts(&ids, &[0.5, 0.3, 0.2], &[0.5, 1.0, 2.0], &[1, 1, 1]).unwrap();
        let p = AllocParams::new(0.5, 0.9, 1.0, 1.0).unwrap();
        let lambda_max = p.gamma() / (p.alpha() * 0.5);
        assert!(primal_at(&s, &p, lambda_max).iter().all(|&e| e == 0.0));
        let lo = zero_level(&s, &p);
        assert!(lo <= lambda_max);
        assert!(primal_at(&s, &p, lo).iter().all(|&e| e == 0.0));
        assert!(primal_at(&s, &p, 0.99 * lo).iter().any(|&e| e > 0.0));
    }

    #[test]
    fn primal_two_layer_hand_kkt() {
        let (s, p) = two_layer(1.0);
        let e = primal_at(&s, &p, 0.0);
        assert!((e[0] - 0.5).abs() < 1e-15);
        assert_eq!(e[1], 0.0);
    }

    #[test]
    fn zero_score_layers() {
        let s = StatsVector::from_scores(&[0.0, 1.0]).unwrap();
        let p = AllocParams::new(0.5, 0.9, 1.0, 10.0).unwrap();
        assert_eq!(primal_at(&s, &p, 0.0)[0], 0.0);
        // beta = 0 treats every layer alike, including q = 0
        let p0 = AllocParams::new(0.5, 0.9, 0.0, 10.0).unwrap();
        let e = primal_at(&s, &p0, 0.0);
        assert_eq!(e[0], e[1]);
        assert!(e[0] > 0.0);
    }

    #[test]
    fn solve_binding_example() {
        let (s, p) = two_layer(0.2);
        let plan = solve(&s, &p, &AllocSolverConfig::default()).unwrap();
        assert!(plan.binding());
        assert!((plan.lambda() - 0.125).abs() < 1e-8);
        assert!((plan.e()[0] - 0.2).abs() < 1e-9);
        assert_eq!(plan.e()[1], 0.0);
        assert!(plan.constraint_residual() <= 1e-9);
        assert!(plan.kkt_residual() <= 1e-8);
        assert_eq!(plan.active(), &[0]);
    }

    #[test]
    fn solve_slack_budget() {
        let (s, p) = two_layer(5.0);
        let plan = solve(&s, &p, &AllocSolverConfig::default()).unwrap();
        assert_eq!(plan.lambda(), 0.0);
        assert!(!plan.binding());
        assert_eq!(plan.e(), primal_at(&s, &p, 0.0).as_slice());
        assert!(plan.kkt_residual() <= 1e-12);
        assert!((plan.constraint_residual() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn solve_zero_budget() {
        let (s, p) = two_layer(0.0);
        let plan = solve(&s, &p, &AllocSolverConfig::default()).unwrap();
        assert!(plan.e().iter().all(|&e| e == 0.0));
        // smallest multiplier that zeroes every layer: 0.75 / 1 - 0.5
        assert!((plan.lambda() - 0.25).abs() < 1e-15);
        assert_eq!(plan.kkt_residual(), 0.0);
        assert_eq!(plan.constraint_residual(), 0.0);
    }

    #[test]
    fn beta_zero_equal_costs_equal_capacity() {
        let s = StatsVector::from_scores(&[0.6, 0.3, 0.1]).unwrap();
        let p = AllocParams::new(0.5, 0.9, 0.0, 0.3).unwrap();
        let plan = solve(&s, &p, &AllocSolverConfig::default()).unwrap();
        assert!(plan.binding());
        let e = plan.e();
        assert!(e.iter().all(|&v| (v - e[0]).abs() < 1e-15));
        assert!((e[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn kkt_detects_perturbation() {
        let (s, p) = two_layer(0.2);
        let plan = solve(&s, &p, &AllocSolverConfig::default()).unwrap();
        let mut e = plan.e().to_vec();
        e[0] += 0.1;
        assert!(kkt_residual(&s, &p, &e, plan.lambda()) > 1e-3);
        assert!(plan_kkt_residual(&s, &p, &plan) <= 10.0 * 1e-9);
    }

    #[test]
    fn iteration_cap_surfaces_bracket() {
        let (s, p) = two_layer(0.3);
        let root = 0.75 / 1.3 - 0.5;
        let cfg = AllocSolverConfig::default().with_max_iter(2).unwrap();
        match solve(&s, &p, &cfg) {
            Err(crate::Error::MaxIterExceeded { lo, hi, .. }) => assert!(lo < root && root < hi),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(AllocSolverConfig::default().with_residual_tol(0.0).is_err());
        assert!(AllocSolverConfig::default().with_max_iter(0).is_err());
        assert_eq!(AllocSolverConfig::default().residual_tol(0.5), 1e-9);
        assert!((AllocSolverConfig::default().residual_tol(100.0) - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn concentration_at_large_beta() {
        // gamma is large enough that q^16 still activates the top layer
        let s = StatsVector::from_scores(&[0.4, 0.3, 0.2, 0.1]).unwrap();
        let share = |beta: f64| {
            let p = AllocParams::new(0.5, 1e8, beta, 10.0).unwrap();
            let plan = solve(&s, &p, &AllocSolverConfig::default()).unwrap();
            assert!(plan.binding());
            plan.e()[0] / plan.e().iter().sum::<f64>()
        };
        assert!(share(1.0) < 0.5);
        assert!(share(16.0) > 0.99);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
            (prop::collection::vec(0.01f64..1.0, 2..12), 0.0f64..3.0, 0.0f64..4.0)
        }

        proptest! {
            #[test]
            fn dual_map_monotone((z, beta, budget) in instance()) {
                let q = crate::normalize_scores(&z).unwrap();
                let s = StatsVector::from_scores(&q).unwrap();
                let p = AllocParams::new(0.2, 2.0, beta, budget).unwrap();
                let mut prev = f64::INFINITY;
                for i in 0..100 {
                    let lambda = i as f64 * 0.1;
                    let spent = spend_at(&s, &p, lambda);
                    prop_assert!(spent <= prev);
                    if prev.is_finite() && prev > 0.0 {
                        prop_assert!(spent < prev);
                    }
                    prev = spent;
                }
            }

            #[test]
            fn solve_contract((z, beta, budget) in instance()) {
                let q = crate::normalize_scores(&z).unwrap();
                let s = StatsVector::from_scores(&q).unwrap();
                let p = AllocParams::new(0.2, 2.0, beta, budget).unwrap();
                let cfg = AllocSolverConfig::default();
                let plan = solve(&s, &p, &cfg).unwrap();
                let tol = cfg.residual_tol(budget);
                let spent: f64 = plan.e().iter().sum();
                prop_assert!(spent <= budget + tol);
                if plan.lambda() > 0.0 {
                    prop_assert!((spent - budget).abs() <= tol);
                }
                prop_assert!(plan.kkt_residual() <= 10.0 * tol);
                // equal costs: capacity follows score order
                for i in 0..q.len() {
                    for j in 0..q.len() {
                        if q[i] > q[j] {
                            prop_assert!(plan.e()[i] >= plan.e()[j]);
                            if beta > 0.0 && plan.e()[j] > 0.0 {
                                prop_assert!(plan.e()[i] > plan.e()[j]);
                            }
                        }
                    }
                }
            }
        }
    }
}
