//! Solver outputs. Both plan types are validated on construction; a plan
//! that violates feasibility or sign constraints is rejected, never repaired.

use crate::error::{invalid, Error, Result};
use crate::stats::{AllocParams, PruneParams, StatsVector};
use crate::{alloc, prune};

/// Capacity allocation for every layer plus the dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocPlan {
    e: Vec<f64>,
    lambda: f64,
    binding: bool,
    constraint_residual: f64,
    kkt_residual: f64,
    active: Vec<usize>,
    iterations: usize,
}

impl AllocPlan {
    /// Validates a candidate solution against `stats`/`params` and records its residuals.
    ///
    /// `tol` is the absolute tolerance on the budget constraint.
    pub fn from_solution(
        stats: &StatsVector,
        params: &AllocParams,
        e: Vec<f64>,
        lambda: f64,
        iterations: usize,
        tol: f64,
    ) -> Result<Self> {
        if e.len() != stats.len() {
            return Err(Error::DimensionMismatch(format!(
                "plan has {} capacities for {} layers",
                e.len(),
                stats.len()
            )));
        }
        if !lambda.is_finite() || e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("allocation plan"));
        }
        if lambda < 0.0 {
            return Err(invalid("lambda", format!("must be >= 0, got {lambda}")));
        }
        if let Some((k, v)) = e.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(invalid(format!("e[{k}]"), format!("must be >= 0, got {v}")));
        }
        let spent: f64 = stats.layers().iter().zip(&e).map(|(l, x)| l.cost() * x).sum();
        let budget = params.budget();
        if spent > budget + tol {
            return Err(invalid(
                "e",
                format!("spends {spent}, over budget {budget} by more than {tol}"),
            ));
        }
        let binding = lambda > 0.0;
        if binding && (spent - budget).abs() > tol {
            return Err(invalid(
                "lambda",
                format!("positive dual {lambda} but budget not binding (spent {spent} of {budget})"),
            ));
        }
        let constraint_residual = if binding {
            (spent - budget).abs()
        } else {
            budget - spent
        };
        let kkt_residual = alloc::kkt_residual(stats, params, &e, lambda);
        let active = e
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, _)| k)
            .collect();
        Ok(Self {
            e,
            lambda,
            binding,
            constraint_residual,
            kkt_residual,
            active,
            iterations,
        })
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Whether the budget constraint is active (`lambda > 0`).
    pub fn binding(&self) -> bool {
        self.binding
    }

    /// `|sum c e - B|` when binding, otherwise the unused budget `B - sum c e`.
    pub fn constraint_residual(&self) -> f64 {
        self.constraint_residual
    }

    pub fn kkt_residual(&self) -> f64 {
        self.kkt_residual
    }

    /// Indices of layers with strictly positive capacity.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Bisection iterations spent (0 when the budget is slack).
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Where a pruning ratio sits relative to its box `[0, rho_cap]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClipStatus {
    Lower,
    Interior,
    Upper,
}

impl ClipStatus {
    pub fn of(rho: f64, cap: f64) -> Self {
        if rho <= 0.0 {
            ClipStatus::Lower
        } else if rho >= cap {
            ClipStatus::Upper
        } else {
            ClipStatus::Interior
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ClipStatus::Lower => "lower",
            ClipStatus::Interior => "interior",
            ClipStatus::Upper => "upper",
        }
    }
}

impl std::str::FromStr for ClipStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(ClipStatus::Lower),
            "interior" => Ok(ClipStatus::Interior),
            "upper" => Ok(ClipStatus::Upper),
            other => Err(invalid("clip_status", format!("unknown value {other:?}"))),
        }
    }
}

/// Pruning ratio for every layer plus the dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunePlan {
    rho: Vec<f64>,
    lambda: f64,
    rho_cap: f64,
    binding: bool,
    sparsity_residual: f64,
    kkt_residual: f64,
    clip_status: Vec<ClipStatus>,
    iterations: usize,
}

impl PrunePlan {
    /// Validates a candidate solution; `tol` is the absolute tolerance on the
    /// sparsity constraint.
    pub fn from_solution(
        stats: &StatsVector,
        params: &PruneParams,
        rho: Vec<f64>,
        lambda: f64,
        rho_cap: f64,
        iterations: usize,
        tol: f64,
    ) -> Result<Self> {
        if rho.len() != stats.len() {
            return Err(Error::DimensionMismatch(format!(
                "plan has {} ratios for {} layers",
                rho.len(),
                stats.len()
            )));
        }
        if !lambda.is_finite() || rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pruning plan"));
        }
        if !(rho_cap > 0.0 && rho_cap <= 1.0) {
            return Err(invalid("rho_cap", format!("must lie in (0, 1], got {rho_cap}")));
        }
        if lambda < 0.0 {
            return Err(invalid("lambda", format!("must be >= 0, got {lambda}")));
        }
        if let Some((k, v)) = rho.iter().enumerate().find(|(_, &v)| !(0.0..=rho_cap).contains(&v)) {
            return Err(invalid(
                format!("rho[{k}]"),
                format!("must lie in [0, {rho_cap}], got {v}"),
            ));
        }
        let removed: f64 = stats.layers().iter().zip(&rho).map(|(l, r)| l.size() as f64 * r).sum();
        let target = params.target();
        if removed < target - tol {
            return Err(invalid(
                "rho",
                format!("removes {removed} parameters, short of target {target} by more than {tol}"),
            ));
        }
        let binding = lambda > 0.0;
        if binding && (removed - target).abs() > tol {
            return Err(invalid(
                "lambda",
                format!("positive dual {lambda} but target not binding (removed {removed} of {target})"),
            ));
        }
        let sparsity_residual = if binding {
            (removed - target).abs()
        } else {
            removed - target
        };
        let kkt_residual = prune::kkt_residual(stats, params, &rho, lambda, rho_cap);
        let clip_status = rho.iter().map(|&r| ClipStatus::of(r, rho_cap)).collect();
        Ok(Self {
            rho,
            lambda,
            rho_cap,
            binding,
            sparsity_residual,
            kkt_residual,
            clip_status,
            iterations,
        })
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho_cap(&self) -> f64 {
        self.rho_cap
    }

    pub fn binding(&self) -> bool {
        self.binding
    }

    /// `|sum n rho - S|` when binding, otherwise the surplus `sum n rho - S`.
    pub fn sparsity_residual(&self) -> f64 {
        self.sparsity_residual
    }

    pub fn kkt_residual(&self) -> f64 {
        self.kkt_residual
    }

    pub fn clip_status(&self) -> &[ClipStatus] {
        &self.clip_status
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Fraction of all parameters removed.
    pub fn achieved_sparsity(&self, stats: &StatsVector) -> f64 {
        let removed: f64 = stats
            .layers()
            .iter()
            .zip(&self.rho)
            .map(|(l, r)| l.size() as f64 * r)
            .sum();
        removed / stats.total_size()
    }
}
