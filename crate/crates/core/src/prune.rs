//! Layer-wise pruning ratios.
//!
//! Minimizes `sum_k [b n_k (1 - rho_k) + eta q_k^kappa rho_k^2]` over the box
//! `0 <= rho_k <= rho_cap` subject to `sum_k n_k rho_k >= S`. For a fixed dual
//! value the minimizer is the clipped stationary point
//!
//! ```text
//! rho_k(lambda) = clip((b + lambda) n_k / (2 eta q_k^kappa), 0, rho_cap)
//! ```
//!
//! which is non-decreasing in `lambda`, so the target-binding multiplier is
//! found by bisection.
//!
//! The upper bracket is `max_k(2 eta q_k^kappa rho_cap / n_k) - b`, the
//! smallest dual value at which every layer sits at the cap. Using the
//! minimum over layers instead saturates only one layer and can leave the
//! target uncovered.

use crate::bisect::{bisect, refine};
use crate::error::{invalid, Error, Result};
use crate::plan::PrunePlan;
use crate::stats::{score_power, LayerStats, PruneParams, StatsVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneSolverConfig {
    residual_tol: Option<f64>,
    max_iter: usize,
    rho_cap: f64,
}

impl Default for PruneSolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: None,
            max_iter: 200,
            rho_cap: 1.0,
        }
    }
}

impl PruneSolverConfig {
    /// Absolute tolerance on `|sum n rho - S|`. Without one, `1e-9 * max(1, S)` is used.
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

    /// Per-layer upper bound on the pruning ratio, in `(0, 1]`.
    pub fn with_rho_cap(mut self, rho_cap: f64) -> Result<Self> {
        if !(rho_cap > 0.0 && rho_cap <= 1.0) {
            return Err(invalid("rho_cap", format!("must lie in (0, 1], got {rho_cap}")));
        }
        self.rho_cap = rho_cap;
        Ok(self)
    }

    pub fn residual_tol(&self, target: f64) -> f64 {
        self.residual_tol.unwrap_or(1e-9 * target.max(1.0))
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    pub fn rho_cap(&self) -> f64 {
        self.rho_cap
    }
}

/// Degradation curvatures `2 eta q_k^kappa`.
pub fn penalty_curvatures(stats: &StatsVector, params: &PruneParams) -> Vec<f64> {
    stats
        .layers()
        .iter()
        .map(|l| curvature(l, params))
        .collect()
}

#[inline]
fn curvature(l: &LayerStats, params: &PruneParams) -> f64 {
    2.0 * params.eta() * score_power(l.q(), params.kappa())
}

/// `n_k / (2 eta q_k^kappa)`, infinite for layers with zero penalty.
#[inline]
fn slope(l: &LayerStats, params: &PruneParams) -> f64 {
    let v = curvature(l, params);
    if v > 0.0 {
        l.size() as f64 / v
    } else {
        f64::INFINITY
    }
}

#[inline]
fn ratio(slope: f64, numerator: f64, cap: f64) -> f64 {
    // numerator = b + lambda > 0, so the lower clip never binds
    (numerator * slope).clamp(0.0, cap)
}

/// Clipped closed-form primal minimizer for a fixed dual value.
pub fn primal_at(stats: &StatsVector, params: &PruneParams, cfg: &PruneSolverConfig, lambda: f64) -> Vec<f64> {
    let num = params.bits() + lambda;
    stats
        .layers()
        .iter()
        .map(|l| ratio(slope(l, params), num, cfg.rho_cap()))
        .collect()
}

/// `sum_k n_k rho_k(lambda)`.
pub fn removed_at(stats: &StatsVector, params: &PruneParams, cfg: &PruneSolverConfig, lambda: f64) -> f64 {
    let num = params.bits() + lambda;
    stats
        .layers()
        .iter()
        .map(|l| ratio(slope(l, params), num, cfg.rho_cap()) * l.size() as f64)
        .sum()
}

/// Smallest dual value at which every layer is at the cap.
pub fn saturation_level(stats: &StatsVector, params: &PruneParams, cfg: &PruneSolverConfig) -> f64 {
    let top = stats
        .layers()
        .iter()
        .map(|l| curvature(l, params) * cfg.rho_cap() / l.size() as f64)
        .fold(0.0, f64::max);
    (top - params.bits()).max(0.0)
}

/// Solves the pruning program. Fails with [`Error::Infeasible`] when the
/// target exceeds `rho_cap * sum n_k`.
pub fn solve(stats: &StatsVector, params: &PruneParams, cfg: &PruneSolverConfig) -> Result<PrunePlan> {
    let target = params.target();
    let cap = cfg.rho_cap();
    let max_removable = cap * stats.total_size();
    if target > max_removable {
        return Err(Error::Infeasible {
            target,
            max: max_removable,
        });
    }
    let tol = cfg.residual_tol(target);
    let sn: Vec<(f64, f64)> = stats
        .layers()
        .iter()
        .map(|l| (slope(l, params), l.size() as f64))
        .collect();
    let bits = params.bits();
    let free_removed: f64 = sn.iter().map(|&(sk, nk)| nk * ratio(sk, bits, cap)).sum();

    if free_removed >= target {
        let rho = primal_at(stats, params, cfg, 0.0);
        return PrunePlan::from_solution(stats, params, rho, 0.0, cap, 0, tol);
    }
    let hi = saturation_level(stats, params, cfg);
    // The evaluator tracks the bracket the same way `bisect` does; a layer
    // below the cap at the upper end stays interior on the whole bracket and
    // one at the cap at the lower end stays there, so only the rest is rescanned.
    let mut active = sn;
    let (mut lin, mut capped) = (0.0, 0.0);
    let (mut lo_b, mut hi_b) = (0.0, hi);
    let mut prev = (lo_b, hi_b);
    let residual = |lambda: f64| -> f64 {
        prev = (lo_b, hi_b);
        let (top, bottom) = (bits + hi_b, bits + lo_b);
        active.retain(|&(sk, nk)| {
            if top * sk <= cap {
                lin += nk * sk;
                false
            } else if bottom * sk >= cap {
                capped += cap * nk;
                false
            } else {
                true
            }
        });
        let num = bits + lambda;
        let rest: f64 = active.iter().map(|&(sk, nk)| nk * ratio(sk, num, cap)).sum();
        let r = num * lin + capped + rest - target;
        if r < 0.0 {
            lo_b = lambda;
        } else {
            hi_b = lambda;
        }
        r
    };
    let (lambda, iterations) = bisect(0.0, hi, tol, cfg.max_iter(), residual)?;
    let exact = |lambda: f64| removed_at(stats, params, cfg, lambda) - target;
    let (lambda, iterations) = refine(lambda, iterations, prev, tol, cfg.max_iter(), exact)?;
    let rho = primal_at(stats, params, cfg, lambda);
    PrunePlan::from_solution(stats, params, rho, lambda, cap, iterations, tol)
}

/// Stationarity violation of `(rho, lambda)`.
///
/// Interior layers contribute `|2 eta q_k^kappa rho_k - (b + lambda) n_k|`.
/// A layer at the cap needs that quantity `<= 0` and a layer at zero needs it
/// `>= 0`; only the wrong-signed part counts.
pub fn kkt_residual(stats: &StatsVector, params: &PruneParams, rho: &[f64], lambda: f64, rho_cap: f64) -> f64 {
    let num = params.bits() + lambda;
    stats
        .layers()
        .iter()
        .zip(rho)
        .map(|(l, &r)| {
            let v = curvature(l, params);
            let grad = v * r - num * l.size() as f64;
            if r >= rho_cap {
                grad.max(0.0)
            } else if r <= 0.0 {
                (-grad).max(0.0)
            } else {
                grad.abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn plan_kkt_residual(stats: &StatsVector, params: &PruneParams, plan: &PrunePlan) -> f64 {
    kkt_residual(stats, params, plan.rho(), plan.lambda(), plan.rho_cap())
}
