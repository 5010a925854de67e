//! Per-layer statistics and hyperparameter records shared by both solvers.
//!
//! Every type validates its invariants at construction and is immutable
//! afterwards.

use std::collections::HashSet;

use crate::error::{invalid, Error, Result};

/// Absolute tolerance on `sum(q) == 1` for a [`StatsVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// One layer's quality score, per-unit cost and parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    id: String,
    q: f64,
    cost: f64,
    size: u64,
}

impl LayerStats {
    pub fn new(id: impl Into<String>, q: f64, cost: f64, size: u64) -> Result<Self> {
        let id = id.into();
        if !q.is_finite() || !cost.is_finite() {
            return Err(Error::NonFinite("layer stats"));
        }
        if q < 0.0 {
            return Err(invalid(format!("layer {id}: q"), format!("must be >= 0, got {q}")));
        }
        if cost <= 0.0 {
            return Err(invalid(
                format!("layer {id}: cost"),
                format!("must be > 0, got {cost}"),
            ));
        }
        if size == 0 {
            return Err(invalid(format!("layer {id}: size"), "must be >= 1"));
        }
        Ok(Self { id, q, cost, size })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn size(&self) -> u64 {
        self.size
    }
}

/// An ordered, non-empty set of layers whose scores lie on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsVector {
    layers: Vec<LayerStats>,
}

impl StatsVector {
    pub fn new(layers: Vec<LayerStats>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("layers", "at least one layer is required"));
        }
        let mut seen = HashSet::with_capacity(layers.len());
        for l in &layers {
            if !seen.insert(l.id.as_str()) {
                return Err(invalid("layers", format!("duplicate layer id {:?}", l.id)));
            }
        }
        let total: f64 = layers.iter().map(|l| l.q).sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid("q", format!("scores must sum to 1, got {total}")));
        }
        Ok(Self { layers })
    }

    /// Builds a vector from raw gains, normalizing them with [`normalize_scores`].
    pub fn from_gains(ids: &[String], zeta2: &[f64], costs: &[f64], sizes: &[u64]) -> Result<Self> {
        let q = normalize_scores(zeta2)?;
        Self::from_parts(ids, &q, costs, sizes)
    }

    pub fn from_parts(ids: &[String], q: &[f64], costs: &[f64], sizes: &[u64]) -> Result<Self> {
        let k = q.len();
        if ids.len() != k || costs.len() != k || sizes.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "ids {}, q {}, costs {}, sizes {}",
                ids.len(),
                k,
                costs.len(),
                sizes.len()
            )));
        }
        let layers = (0..k)
            .map(|i| LayerStats::new(ids[i].clone(), q[i], costs[i], sizes[i]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// Unit costs and sizes, ids `L0, L1, ...`.
    pub fn from_scores(q: &[f64]) -> Result<Self> {
        let ids: Vec<String> = (0..q.len()).map(|i| format!("L{i}")).collect();
        Self::from_parts(&ids, q, &vec![1.0; q.len()], &vec![1; q.len()])
    }

    /// Same layers with the scores replaced; costs, sizes and ids are kept.
    pub fn with_scores(&self, q: &[f64]) -> Result<Self> {
        if q.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} scores, got {}",
                self.len(),
                q.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(q)
            .map(|(l, &qk)| LayerStats::new(l.id.clone(), qk, l.cost, l.size))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerStats] {
        &self.layers
    }

    pub fn scores(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.q).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.cost).collect()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.size as f64).collect()
    }

    pub fn total_size(&self) -> f64 {
        self.layers.iter().map(|l| l.size as f64).sum()
    }

    /// True when both vectors describe the same layers (ids, costs, sizes) in the same order.
    pub fn same_structure(&self, other: &StatsVector) -> bool {
        self.len() == other.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.id == b.id && a.cost == b.cost && a.size == b.size)
    }
}

/// Normalizes nonnegative gains onto the probability simplex, preserving order.
pub fn normalize_scores(zeta2: &[f64]) -> Result<Vec<f64>> {
    if zeta2.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("gains"));
    }
    if let Some(z) = zeta2.iter().find(|&&z| z < 0.0) {
        return Err(invalid("zeta2", format!("gains must be >= 0, got {z}")));
    }
    // Rescale by the max first so huge gains cannot overflow the sum.
    let max = zeta2.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Err(Error::AllZero);
    }
    let scaled: Vec<f64> = zeta2.iter().map(|z| z / max).collect();
    let total: f64 = scaled.iter().sum();
    Ok(scaled.into_iter().map(|z| z / total).collect())
}

/// Hyperparameters of the capacity-allocation program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocParams {
    alpha: f64,
    gamma: f64,
    beta: f64,
    budget: f64,
}

impl AllocParams {
    pub fn new(alpha: f64, gamma: f64, beta: f64, budget: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("gamma", gamma), ("beta", beta), ("budget", budget)] {
            if !v.is_finite() {
                return Err(invalid(name, format!("must be finite, got {v}")));
            }
        }
        if alpha <= 0.0 {
            return Err(invalid("alpha", format!("must be > 0, got {alpha}")));
        }
        if gamma <= 0.0 {
            return Err(invalid("gamma", format!("must be > 0, got {gamma}")));
        }
        if beta < 0.0 {
            return Err(invalid("beta", format!("must be >= 0, got {beta}")));
        }
        if budget < 0.0 {
            return Err(invalid("budget", format!("must be >= 0, got {budget}")));
        }
        Ok(Self {
            alpha,
            gamma,
            beta,
            budget,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Self::new(self.alpha, self.gamma, self.beta, budget)
    }
}

/// Hyperparameters of the layer-wise pruning program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneParams {
    bits: f64,
    eta: f64,
    kappa: f64,
    target: f64,
}

impl PruneParams {
    /// `target` is the number of parameters to remove. The upper bound
    /// `target <= sum(n_k)` depends on the layers and is checked by
    /// [`PruneParams::check_against`] and the solver.
    pub fn new(bits: f64, eta: f64, kappa: f64, target: f64) -> Result<Self> {
        for (name, v) in [("bits", bits), ("eta", eta), ("kappa", kappa), ("target", target)] {
            if !v.is_finite() {
                return Err(invalid(name, format!("must be finite, got {v}")));
            }
        }
        if bits <= 0.0 {
            return Err(invalid("bits", format!("must be > 0, got {bits}")));
        }
        if eta <= 0.0 {
            return Err(invalid("eta", format!("must be > 0, got {eta}")));
        }
        if kappa < 0.0 {
            return Err(invalid("kappa", format!("must be >= 0, got {kappa}")));
        }
        if target < 0.0 {
            return Err(invalid("target", format!("must be >= 0, got {target}")));
        }
        Ok(Self {
            bits,
            eta,
            kappa,
            target,
        })
    }

    pub fn check_against(&self, stats: &StatsVector) -> Result<()> {
        let total = stats.total_size();
        if self.target > total {
            return Err(invalid(
                "target",
                format!("{} exceeds the total parameter count {total}", self.target),
            ));
        }
        Ok(())
    }

    pub fn bits(&self) -> f64 {
        self.bits
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn with_target(&self, target: f64) -> Result<Self> {
        Self::new(self.bits, self.eta, self.kappa, target)
    }
}

/// `q^p` with the conventions used by both programs: `q^0 = 1` for every `q`,
/// including `q = 0`.
pub(crate) fn score_power(q: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if q == 0.0 {
        0.0
    } else {
        q.powf(p)
    }
}
