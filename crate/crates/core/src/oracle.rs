//! Independent reference solvers for the allocation and pruning programs.
//!
//! These share no code with the closed-form solvers: projected gradient
//! descent with Barzilai-Borwein steps and Armijo backtracking, using exact
//! breakpoint-search projections onto each feasible set, plus a brute-force
//! grid search for two-layer instances.

use crate::error::{invalid, Error, Result};
use crate::stats::{AllocParams, PruneParams, StatsVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub step_init: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            step_init: 1.0,
            max_iters: 200_000,
            grad_tol: 1e-10,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_init > 0.0) || !(self.grad_tol > 0.0) || self.max_iters == 0 {
            return Err(invalid("oracle config", "all fields must be positive"));
        }
        Ok(())
    }
}

/// One of the two supported program shapes.
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    Alloc {
        stats: &'a StatsVector,
        params: &'a AllocParams,
    },
    Prune {
        stats: &'a StatsVector,
        params: &'a PruneParams,
        rho_cap: f64,
    },
}

// q^p with q^0 = 1, kept separate from the solvers' helper.
fn pow0(q: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        q.powf(p)
    }
}

/// `sum_k [alpha c_k e_k - gamma q_k^beta log(1 + e_k)]`.
pub fn alloc_objective(stats: &StatsVector, params: &AllocParams, e: &[f64]) -> f64 {
    stats
        .layers()
        .iter()
        .zip(e)
        .map(|(l, &x)| {
            params.alpha() * l.cost() * x - params.gamma() * pow0(l.q(), params.beta()) * x.ln_1p()
        })
        .sum()
}

/// `sum_k [b n_k (1 - rho_k) + eta q_k^kappa rho_k^2]`.
pub fn prune_objective(stats: &StatsVector, params: &PruneParams, rho: &[f64]) -> f64 {
    stats
        .layers()
        .iter()
        .zip(rho)
        .map(|(l, &r)| {
            params.bits() * l.size() as f64 * (1.0 - r) + params.eta() * pow0(l.q(), params.kappa()) * r * r
        })
        .sum()
}

impl Problem<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        match *self {
            Problem::Alloc { stats, params } => alloc_objective(stats, params, x),
            Problem::Prune { stats, params, .. } => prune_objective(stats, params, x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            Problem::Alloc { stats, params } => stats
                .layers()
                .iter()
                .zip(x)
                .map(|(l, &e)| params.alpha() * l.cost() - params.gamma() * pow0(l.q(), params.beta()) / (1.0 + e))
                .collect(),
            Problem::Prune { stats, params, .. } => stats
                .layers()
                .iter()
                .zip(x)
                .map(|(l, &r)| -params.bits() * l.size() as f64 + 2.0 * params.eta() * pow0(l.q(), params.kappa()) * r)
                .collect(),
        }
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        match *self {
            Problem::Alloc { stats, params } => project_budget(y, &stats.costs(), params.budget()),
            Problem::Prune {
                stats,
                params,
                rho_cap,
            } => project_coverage(y, &stats.sizes(), params.target(), rho_cap),
        }
    }

    fn len(&self) -> usize {
        match *self {
            Problem::Alloc { stats, .. } | Problem::Prune { stats, .. } => stats.len(),
        }
    }

    /// Largest constraint violation of `x` (0 when feasible).
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        match *self {
            Problem::Alloc { stats, params } => {
                let spent: f64 = stats.costs().iter().zip(x).map(|(c, e)| c * e).sum();
                let neg = x.iter().fold(0.0_f64, |m, &e| m.max(-e));
                neg.max(spent - params.budget())
            }
            Problem::Prune {
                stats,
                params,
                rho_cap,
            } => {
                let removed: f64 = stats.sizes().iter().zip(x).map(|(n, r)| n * r).sum();
                let out = x.iter().fold(0.0_f64, |m, &r| m.max(-r).max(r - rho_cap));
                out.max(params.target() - removed)
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective(x)
    }
}

/// Euclidean projection onto `{x >= 0, sum c_k x_k <= budget}`.
pub fn project_budget(y: &[f64], c: &[f64], budget: f64) -> Vec<f64> {
    let clipped: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
    let spent: f64 = clipped.iter().zip(c).map(|(x, c)| x * c).sum();
    if spent <= budget {
        return clipped;
    }
    // x_k = max(y_k - mu c_k, 0); coordinate k is positive while mu < y_k / c_k.
    let mut order: Vec<usize> = (0..y.len()).filter(|&k| y[k] > 0.0).collect();
    order.sort_by(|&a, &b| (y[b] / c[b]).total_cmp(&(y[a] / c[a])));
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut mu = 0.0;
    for (j, &k) in order.iter().enumerate() {
        s1 += c[k] * y[k];
        s2 += c[k] * c[k];
        mu = (s1 - budget) / s2;
        let next = order.get(j + 1).map_or(0.0, |&n| y[n] / c[n]);
        if mu >= next {
            break;
        }
    }
    y.iter().zip(c).map(|(&v, &ck)| (v - mu * ck).max(0.0)).collect()
}

/// Euclidean projection onto `{0 <= x <= cap, sum n_k x_k >= target}`.
pub fn project_coverage(y: &[f64], n: &[f64], target: f64, cap: f64) -> Vec<f64> {
    let clip = |v: f64| v.clamp(0.0, cap);
    let covered = |mu: f64| -> f64 { y.iter().zip(n).map(|(&v, &nk)| nk * clip(v + mu * nk)).sum() };
    if covered(0.0) >= target {
        return y.iter().map(|&v| clip(v)).collect();
    }
    // covered(mu) is piecewise linear with kinks where y_k + mu n_k hits 0 or cap.
    let mut kinks: Vec<f64> = y
        .iter()
        .zip(n)
        .flat_map(|(&v, &nk)| [-v / nk, (cap - v) / nk])
        .filter(|&m| m > 0.0)
        .collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    // first kink at which coverage reaches the target
    let (mut lo, mut hi) = (0usize, kinks.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if covered(kinks[mid]) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let right = kinks[lo];
    let left = if lo == 0 { 0.0 } else { kinks[lo - 1] };
    let (f_left, f_right) = (covered(left), covered(right));
    let mu = if f_right > f_left {
        left + (target - f_left) * (right - left) / (f_right - f_left)
    } else {
        right
    };
    let mut x: Vec<f64> = y.iter().zip(n).map(|(&v, &nk)| clip(v + mu * nk)).collect();
    // absorb rounding shortfall on an unsaturated coordinate
    let short = target - x.iter().zip(n).map(|(a, b)| a * b).sum::<f64>();
    if short > 0.0 {
        if let Some(k) = (0..x.len()).filter(|&k| x[k] < cap).max_by(|&a, &b| n[a].total_cmp(&n[b])) {
            x[k] = clip(x[k] + short / n[k]);
        }
    }
    x
}

/// Projected gradient descent to a stationary point of `problem`.
pub fn solve_pgd(problem: &Problem<'_>, cfg: &OracleConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if let Problem::Prune {
        stats,
        params,
        rho_cap,
    } = *problem
    {
        if params.target() > rho_cap * stats.total_size() {
            return Err(Error::Infeasible {
                target: params.target(),
                max: rho_cap * stats.total_size(),
            });
        }
    }
    const ARMIJO: f64 = 1e-4;
    let pg_norm = |x: &[f64], g: &[f64]| -> f64 {
        let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        let p = problem.project(&y);
        x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };

    let mut x = problem.project(&vec![0.0; problem.len()]);
    let mut f = problem.objective(&x);
    let mut g = problem.gradient(&x);
    let mut step = cfg.step_init;
    let mut last_pg = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        last_pg = pg_norm(&x, &g);
        if last_pg <= cfg.grad_tol {
            return Ok(x);
        }
        let mut t = step;
        let (x_new, f_new) = loop {
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let cand = problem.project(&y);
            let fc = problem.objective(&cand);
            let decrease: f64 = g.iter().zip(&cand).zip(&x).map(|((gi, c), xi)| gi * (c - xi)).sum();
            // slack at the rounding level of f keeps the search from stalling at the optimum
            if fc <= f + ARMIJO * decrease + 1e-15 * f.abs() || t < 1e-30 {
                break (cand, fc);
            }
            t *= 0.5;
        };
        let g_new = problem.gradient(&x_new);
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..x.len() {
            let s = x_new[k] - x[k];
            ss += s * s;
            sy += s * (g_new[k] - g[k]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { cfg.step_init };
        if ss == 0.0 && pg_norm(&x_new, &g_new) > cfg.grad_tol {
            // no progress possible at this precision
            return Err(Error::NoConvergence {
                iterations: cfg.max_iters,
                pg_norm: last_pg,
            });
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iters,
        pg_norm: last_pg,
    })
}

/// Best feasible point of a two-layer instance on a `points x points` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub x: [f64; 2],
    pub value: f64,
    /// Grid spacing per coordinate.
    pub spacing: [f64; 2],
}

/// Brute-force grid search over a box known to contain the minimizer:
/// `[0, e_k(0)]` for allocation (capacities only shrink as the dual grows)
/// and `[0, rho_cap]` for pruning.
pub fn grid_search(problem: &Problem<'_>, points: usize) -> Result<GridResult> {
    if problem.len() != 2 {
        return Err(invalid("grid_search", "only two-layer instances are supported"));
    }
    if points < 2 {
        return Err(invalid("points", "need at least two grid points per axis"));
    }
    let upper: [f64; 2] = match *problem {
        Problem::Alloc { stats, params } => {
            let mut u = [0.0; 2];
            for (k, l) in stats.layers().iter().enumerate() {
                let free = params.gamma() * pow0(l.q(), params.beta()) / (params.alpha() * l.cost()) - 1.0;
                u[k] = free.max(0.0);
            }
            u
        }
        Problem::Prune { rho_cap, .. } => [rho_cap; 2],
    };
    let spacing = [upper[0] / (points - 1) as f64, upper[1] / (points - 1) as f64];
    let mut best: Option<GridResult> = None;
    for i in 0..points {
        let a = i as f64 * spacing[0];
        for j in 0..points {
            let x = [a, j as f64 * spacing[1]];
            if problem.infeasibility(&x) > 0.0 {
                continue;
            }
            let v = problem.objective(&x);
            if best.as_ref().is_none_or(|b| v < b.value) {
                best = Some(GridResult { x, value: v, spacing });
            }
        }
    }
    best.ok_or_else(|| invalid("grid_search", "no feasible grid point"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_examples() {
        let s = StatsVector::from_scores(&[1.0]).unwrap();
        let p = AllocParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(alloc_objective(&s, &p, &[0.0]), 0.0);
        assert!((alloc_objective(&s, &p, &[1.0]) - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((alloc_objective(&s, &p, &[1.0]) - 0.306853).abs() < 1e-6);

        let s = StatsVector::from_parts(
            &["a".into(), "b".into(), "c".into()],
            &[0.25, 0.25, 0.5],
            &[1.0; 3],
            &[3, 4, 5],
        )
        .unwrap();
        let p = PruneParams::new(16.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(prune_objective(&s, &p, &[0.0; 3]), 16.0 * 12.0);
        let u = StatsVector::from_scores(&[0.25; 4]).unwrap();
        assert!((prune_objective(&u, &p, &[1.0; 4]) - 2.0 * 0.25 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn budget_projection() {
        let c = [1.0, 2.0, 0.5];
        // inside: clipping only
        assert_eq!(project_budget(&[0.5, -1.0, 0.2], &c, 10.0), vec![0.5, 0.0, 0.2]);
        let x = project_budget(&[3.0, 2.0, -1.0], &c, 2.0);
        let spent: f64 = x.iter().zip(&c).map(|(a, b)| a * b).sum();
        assert!((spent - 2.0).abs() < 1e-12);
        assert!(x.iter().all(|&v| v >= 0.0));
        // optimality: y - x is a nonnegative multiple of c on the support
        let mu = (3.0 - x[0]) / c[0];
        assert!(((2.0 - x[1]) / c[1] - mu).abs() < 1e-12 || x[1] == 0.0);
        assert_eq!(project_budget(&[1.0, 1.0, 1.0], &c, 0.0), vec![0.0; 3]);
    }

    #[test]
    fn coverage_projection() {
        let n = [1.0, 2.0, 3.0];
        assert_eq!(project_coverage(&[0.5, 1.5, -0.1], &n, 1.0, 1.0), vec![0.5, 1.0, 0.0]);
        let x = project_coverage(&[0.0, 0.1, 0.2], &n, 4.0, 0.9);
        let covered: f64 = x.iter().zip(&n).map(|(a, b)| a * b).sum();
        assert!((4.0 - 1e-12..=4.0 + 1e-9).contains(&covered));
        assert!(x.iter().all(|&v| (0.0..=0.9).contains(&v)));
    }

    #[test]
    fn pgd_alloc_example() {
        let s = StatsVector::from_scores(&[0.75, 0.25]).unwrap();
        let p = AllocParams::new(0.5, 1.0, 1.0, 0.2).unwrap();
        let x = solve_pgd(&Problem::Alloc { stats: &s, params: &p }, &OracleConfig::default()).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-5 && x[1].abs() < 1e-5);
    }

    #[test]
    fn pgd_prune_example() {
        let s = StatsVector::from_scores(&[0.8, 0.2]).unwrap();
        let p = PruneParams::new(1.0, 20.0, 1.0, 1.0).unwrap();
        let prob = Problem::Prune {
            stats: &s,
            params: &p,
            rho_cap: 1.0,
        };
        let x = solve_pgd(&prob, &OracleConfig::default()).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-5 && (x[1] - 0.8).abs() < 1e-5);
        assert!(prob.infeasibility(&x) <= 1e-12);
    }

    #[test]
    fn pgd_unconstrained_alloc() {
        let s = StatsVector::from_scores(&[0.5, 0.3, 0.2]).unwrap();
        let p = AllocParams::new(0.1, 1.0, 1.0, 100.0).unwrap();
        let x = solve_pgd(&Problem::Alloc { stats: &s, params: &p }, &OracleConfig::default()).unwrap();
        // free optimum: e_k = gamma q_k / alpha - 1
        for (xk, q) in x.iter().zip([0.5, 0.3, 0.2]) {
            assert!((xk - (q / 0.1 - 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn pgd_reports_infeasible_prune() {
        let s = StatsVector::from_scores(&[0.8, 0.2]).unwrap();
        let p = PruneParams::new(1.0, 20.0, 1.0, 1.5).unwrap();
        let prob = Problem::Prune {
            stats: &s,
            params: &p,
            rho_cap: 0.5,
        };
        assert!(matches!(solve_pgd(&prob, &OracleConfig::default()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn grid_finds_prune_optimum() {
        let s = StatsVector::from_scores(&[0.8, 0.2]).unwrap();
        let p = PruneParams::new(1.0, 20.0, 1.0, 1.0).unwrap();
        let prob = Problem::Prune {
            stats: &s,
            params: &p,
            rho_cap: 1.0,
        };
        let r = grid_search(&prob, 201).unwrap();
        assert!((r.x[0] - 0.2).abs() < 0.011 && (r.x[1] - 0.8).abs() < 0.011);
    }
}
