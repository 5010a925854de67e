//! Curvature-weighted capacity allocation and layer-wise pruning.
//!
//! Per-layer gains `zeta2 = g.(H + tau I)^{-1}.g` ([`gain`]) are normalized
//! into scores `q` ([`normalize_scores`]) that drive two separable convex
//! programs, each solved exactly by a closed-form primal map and a scalar
//! dual bisection:
//!
//! - [`alloc`]: distribute capacity under a linear budget (water-filling);
//! - [`prune`]: choose per-layer pruning ratios meeting a global sparsity target.
//!
//! [`oracle`] holds independent reference solvers, [`transfer`] measures the
//! regret of reusing a plan after the scores drift, and [`probe`] provides
//! toy objectives with known curvature.

mod bisect;
mod error;

pub mod alloc;
pub mod gain;
pub mod oracle;
pub mod plan;
pub mod probe;
pub mod prune;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
pub use plan::{AllocPlan, ClipStatus, PrunePlan};
pub use stats::{normalize_scores, AllocParams, LayerStats, PruneParams, StatsVector};
