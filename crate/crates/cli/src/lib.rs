//! Command-line front end for `curvalloc`: reads layer statistics, runs the
//! gain, allocation, pruning and transfer computations, and writes plans and
//! reports as JSON.

mod error;
pub mod files;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use curvalloc::alloc::{self, AllocSolverConfig};
use curvalloc::gain::{self, Hessian, LayerCurvature};
use curvalloc::prune::{self, PruneSolverConfig};
use curvalloc::transfer::{self, TransferProgram};
use curvalloc::{normalize_scores, AllocParams, AllocPlan, ClipStatus, PruneParams, PrunePlan, StatsVector};
use nalgebra::{DMatrix, DVector};

pub use error::CliError;
use files::{
    parse_matrix_file, to_text, BlockKind, GainDocument, GainLayer, LayersFile, PlanFile, PlanLayer, PlanParams,
    Program, RegretDocument, Residuals, TOOL_VERSION,
};

#[derive(Debug, Parser)]
#[command(name = "curvalloc", version, about = "Curvature-weighted capacity allocation and layer-wise pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distribute capacity across layers under a linear budget.
    Alloc(AllocCmd),
    /// Choose per-layer pruning ratios that meet a global sparsity target.
    Prune(PruneCmd),
    /// Compute curvature-adjusted gains from per-layer gradients and Hessians.
    Gain(GainCmd),
    /// Regret of reusing the plan for one layers file on another.
    Transfer(TransferCmd),
    /// Re-check a plan file against its layers file.
    Verify(VerifyCmd),
}

#[derive(Debug, Args)]
pub struct AllocFlags {
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct PruneFlags {
    /// Number of parameters to remove.
    #[arg(long, conflicts_with = "sparsity")]
    pub target: Option<f64>,
    /// Fraction of all parameters to remove.
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long, default_value_t = 16.0)]
    pub bits: f64,
    #[arg(long, default_value_t = 2.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Upper bound on every per-layer ratio.
    #[arg(long, default_value_t = 1.0)]
    pub cap: f64,
}

#[derive(Debug, Args)]
pub struct AllocCmd {
    pub input: PathBuf,
    #[arg(long)]
    pub budget: f64,
    #[command(flatten)]
    pub flags: AllocFlags,
    /// Absolute tolerance on the budget residual.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneCmd {
    pub input: PathBuf,
    #[command(flatten)]
    pub flags: PruneFlags,
    /// Absolute tolerance on the sparsity residual.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GainCmd {
    #[arg(long)]
    pub grad: PathBuf,
    #[arg(long)]
    pub hess: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProgramArg {
    Alloc,
    Prune,
}

#[derive(Debug, Args)]
pub struct TransferCmd {
    /// Layers file the plan is computed on.
    pub input_a: PathBuf,
    /// Layers file the plan is evaluated on.
    pub input_b: PathBuf,
    #[arg(long, value_enum)]
    pub program: ProgramArg,
    #[arg(long)]
    pub budget: Option<f64>,
    #[command(flatten)]
    pub alloc: AllocFlags,
    #[command(flatten)]
    pub prune: PruneFlags,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyCmd {
    #[arg(long)]
    pub layers: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
}

/// Result of a successful command: the document to write and a one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub document: Option<String>,
    pub out: Option<PathBuf>,
    pub summary: String,
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Alloc(c) => run_alloc(&c),
        Command::Prune(c) => run_prune(&c),
        Command::Gain(c) => run_gain(&c),
        Command::Transfer(c) => run_transfer(&c),
        Command::Verify(c) => run_verify(&c),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_layers(path: &Path) -> Result<StatsVector, CliError> {
    LayersFile::parse(&read(path)?)?.to_stats()
}

fn alloc_params(flags: &AllocFlags, budget: f64) -> Result<AllocParams, CliError> {
    AllocParams::new(flags.alpha, flags.gamma, flags.beta, budget).map_err(CliError::from_core)
}

fn alloc_config(tol: Option<f64>) -> Result<AllocSolverConfig, CliError> {
    let cfg = AllocSolverConfig::default();
    match tol {
        Some(t) => cfg.with_residual_tol(t).map_err(CliError::from_core),
        None => Ok(cfg),
    }
}

fn prune_setup(
    flags: &PruneFlags,
    tol: Option<f64>,
    stats: &StatsVector,
) -> Result<(PruneParams, PruneSolverConfig), CliError> {
    let target = match (flags.target, flags.sparsity) {
        (Some(t), None) => t,
        (None, Some(f)) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Validation(format!("sparsity: must lie in [0, 1], got {f}")));
            }
            f * stats.total_size()
        }
        _ => return Err(CliError::Validation("target: give exactly one of --target or --sparsity".into())),
    };
    let params = PruneParams::new(flags.bits, flags.eta, flags.kappa, target).map_err(CliError::from_core)?;
    let mut cfg = PruneSolverConfig::default()
        .with_rho_cap(flags.cap)
        .map_err(CliError::from_core)?;
    if let Some(t) = tol {
        cfg = cfg.with_residual_tol(t).map_err(CliError::from_core)?;
    }
    Ok((params, cfg))
}

fn alloc_document(stats: &StatsVector, params: &AllocParams, tol: f64, plan: &AllocPlan) -> PlanFile {
    let layers = stats
        .layers()
        .iter()
        .zip(plan.e())
        .map(|(l, &e)| PlanLayer {
            id: l.id().to_string(),
            value: e,
            clip_status: None,
            floor: Some(e.floor()),
            round: Some(e.round()),
        })
        .collect();
    PlanFile {
        program: Program::Alloc,
        lambda_star: plan.lambda(),
        binding: plan.binding(),
        iterations: plan.iterations(),
        residuals: Residuals {
            constraint: plan.constraint_residual(),
            kkt: plan.kkt_residual(),
        },
        layers,
        params: PlanParams {
            alpha: Some(params.alpha()),
            gamma: Some(params.gamma()),
            beta: Some(params.beta()),
            budget: Some(params.budget()),
            residual_tol: tol,
            ..PlanParams::default()
        },
        tool_version: TOOL_VERSION.to_string(),
    }
}

fn prune_document(stats: &StatsVector, params: &PruneParams, tol: f64, plan: &PrunePlan) -> PlanFile {
    let layers = stats
        .layers()
        .iter()
        .zip(plan.rho())
        .zip(plan.clip_status())
        .map(|((l, &r), c)| PlanLayer {
            id: l.id().to_string(),
            value: r,
            clip_status: Some(c.as_str().to_string()),
            floor: None,
            round: None,
        })
        .collect();
    PlanFile {
        program: Program::Prune,
        lambda_star: plan.lambda(),
        binding: plan.binding(),
        iterations: plan.iterations(),
        residuals: Residuals {
            constraint: plan.sparsity_residual(),
            kkt: plan.kkt_residual(),
        },
        layers,
        params: PlanParams {
            bits: Some(params.bits()),
            eta: Some(params.eta()),
            kappa: Some(params.kappa()),
            target: Some(params.target()),
            rho_cap: Some(plan.rho_cap()),
            residual_tol: tol,
            ..PlanParams::default()
        },
        tool_version: TOOL_VERSION.to_string(),
    }
}

pub fn run_alloc(c: &AllocCmd) -> Result<Outcome, CliError> {
    let stats = load_layers(&c.input)?;
    let params = alloc_params(&c.flags, c.budget)?;
    let cfg = alloc_config(c.tol)?;
    let plan = alloc::solve(&stats, &params, &cfg).map_err(CliError::from_core)?;
    let spent: f64 = stats.costs().iter().zip(plan.e()).map(|(c, e)| c * e).sum();
    let doc = alloc_document(&stats, &params, cfg.residual_tol(params.budget()), &plan);
    Ok(Outcome {
        document: Some(to_text(&doc)),
        out: c.out.clone(),
        summary: format!(
            "alloc: lambda*={} spent={} budget={} active={}/{}",
            plan.lambda(),
            spent,
            params.budget(),
            plan.active().len(),
            stats.len()
        ),
    })
}

pub fn run_prune(c: &PruneCmd) -> Result<Outcome, CliError> {
    let stats = load_layers(&c.input)?;
    let (params, cfg) = prune_setup(&c.flags, c.tol, &stats)?;
    let plan = prune::solve(&stats, &params, &cfg).map_err(CliError::from_core)?;
    let doc = prune_document(&stats, &params, cfg.residual_tol(params.target()), &plan);
    let capped = plan.clip_status().iter().filter(|&&s| s == ClipStatus::Upper).count();
    Ok(Outcome {
        document: Some(to_text(&doc)),
        out: c.out.clone(),
        summary: format!(
            "prune: lambda*={} sparsity={} capped={}/{}",
            plan.lambda(),
            plan.achieved_sparsity(&stats),
            capped,
            stats.len()
        ),
    })
}

pub fn run_gain(c: &GainCmd) -> Result<Outcome, CliError> {
    let grads = parse_matrix_file(&read(&c.grad)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", c.grad.display())))?;
    let hess = parse_matrix_file(&read(&c.hess)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", c.hess.display())))?;
    if grads.is_empty() {
        return Err(CliError::Validation("grad: no layers".into()));
    }
    if grads.len() != hess.len() {
        return Err(CliError::Validation(format!(
            "hess: {} gradient blocks but {} Hessian blocks",
            grads.len(),
            hess.len()
        )));
    }
    let mut reports = Vec::with_capacity(grads.len());
    for g in &grads {
        if g.kind != BlockKind::Vector {
            return Err(CliError::Validation(format!("grad: layer {} must not carry kind=", g.id)));
        }
        let h = hess
            .iter()
            .find(|h| h.id == g.id)
            .ok_or_else(|| CliError::Validation(format!("hess: no block for layer {}", g.id)))?;
        if h.p != g.p {
            return Err(CliError::Validation(format!(
                "hess: layer {} has p={} but its gradient has p={}",
                g.id, h.p, g.p
            )));
        }
        let hessian = match h.kind {
            BlockKind::Dense => Hessian::Dense(DMatrix::from_row_slice(h.p, h.p, &h.values)),
            BlockKind::Diag => Hessian::Diagonal(DVector::from_column_slice(&h.values)),
            BlockKind::Vector => {
                return Err(CliError::Validation(format!(
                    "hess: layer {} needs kind=dense or kind=diag",
                    g.id
                )))
            }
        };
        let curv = LayerCurvature::new(DVector::from_column_slice(&g.values), hessian, c.tau).map_err(|e| {
            match CliError::from_core(e) {
                CliError::NotPositiveDefinite { .. } => CliError::NotPositiveDefinite { layer: g.id.clone() },
                CliError::Validation(m) => CliError::Validation(format!("layer {}: {m}", g.id)),
                other => other,
            }
        })?;
        reports.push((g, gain::compute_gain(&curv)));
    }
    let zeta2: Vec<f64> = reports.iter().map(|(_, r)| r.zeta2()).collect();
    let q = normalize_scores(&zeta2).map_err(CliError::from_core)?;
    let layers = reports
        .iter()
        .zip(&q)
        .map(|((g, r), &qk)| GainLayer {
            id: g.id.clone(),
            p: g.p,
            zeta2: r.zeta2(),
            q: qk,
            bias_ratio: gain::bias_ratio(r),
            lambda_min: r.lambda_min(),
        })
        .collect();
    let doc = GainDocument {
        tau: c.tau,
        layers,
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok(Outcome {
        document: Some(to_text(&doc)),
        out: c.out.clone(),
        summary: format!("gain: layers={} tau={} total_zeta2={}", q.len(), c.tau, zeta2.iter().sum::<f64>()),
    })
}

pub fn run_transfer(c: &TransferCmd) -> Result<Outcome, CliError> {
    let a = load_layers(&c.input_a)?;
    let b = load_layers(&c.input_b)?;
    if !a.same_structure(&b) {
        return Err(CliError::Validation(
            "layers: both files must list the same ids, costs and sizes in the same order".into(),
        ));
    }
    let (program, kind) = match c.program {
        ProgramArg::Alloc => {
            let budget = c
                .budget
                .ok_or_else(|| CliError::Validation("budget: required for --program alloc".into()))?;
            let params = alloc_params(&c.alloc, budget)?;
            (TransferProgram::Alloc(params, alloc_config(c.tol)?), Program::Alloc)
        }
        ProgramArg::Prune => {
            let (params, cfg) = prune_setup(&c.prune, c.tol, &a)?;
            (TransferProgram::Prune(params, cfg), Program::Prune)
        }
    };
    let r = transfer::regret(&program, &a, &b).map_err(CliError::from_core)?;
    let doc = RegretDocument {
        program: kind,
        regret: r.regret,
        delta: r.delta,
        sigma: r.sigma,
        l_x: r.l_x,
        l_xq: r.l_xq,
        bound: r.bound,
        satisfied: r.satisfied,
        boundary: r.boundary,
        distance: r.distance,
        sensitivity_bound: r.sensitivity_bound(),
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok(Outcome {
        document: Some(to_text(&doc)),
        out: c.out.clone(),
        summary: format!(
            "transfer: regret={} bound={} satisfied={} boundary={}",
            r.regret, r.bound, r.satisfied, r.boundary
        ),
    })
}

fn param(v: Option<f64>, name: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("params.{name}: missing")))
}

/// KKT residual of a plan file recomputed against its layers; fails unless it
/// is within ten times the plan's residual tolerance.
pub fn verify_plan(stats: &StatsVector, plan: &PlanFile) -> Result<f64, CliError> {
    if plan.layers.len() != stats.len()
        || plan.layers.iter().zip(stats.layers()).any(|(p, l)| p.id != l.id())
    {
        return Err(CliError::Validation("layers: plan ids do not match the layers file".into()));
    }
    let values: Vec<f64> = plan.layers.iter().map(|l| l.value).collect();
    let p = &plan.params;
    let tol = p.residual_tol;
    let kkt = match plan.program {
        Program::Alloc => {
            let params = AllocParams::new(
                param(p.alpha, "alpha")?,
                param(p.gamma, "gamma")?,
                param(p.beta, "beta")?,
                param(p.budget, "budget")?,
            )
            .map_err(CliError::from_core)?;
            AllocPlan::from_solution(stats, &params, values, plan.lambda_star, plan.iterations, tol)
                .map_err(|e| CliError::Check(format!("plan rejected: {e}")))?
                .kkt_residual()
        }
        Program::Prune => {
            let params = PruneParams::new(
                param(p.bits, "bits")?,
                param(p.eta, "eta")?,
                param(p.kappa, "kappa")?,
                param(p.target, "target")?,
            )
            .map_err(CliError::from_core)?;
            let cap = param(p.rho_cap, "rho_cap")?;
            PrunePlan::from_solution(stats, &params, values, plan.lambda_star, cap, plan.iterations, tol)
                .map_err(|e| CliError::Check(format!("plan rejected: {e}")))?
                .kkt_residual()
        }
    };
    if kkt > 10.0 * tol {
        return Err(CliError::Check(format!("kkt residual {kkt} exceeds 10 x {tol}")));
    }
    Ok(kkt)
}

pub fn run_verify(c: &VerifyCmd) -> Result<Outcome, CliError> {
    let stats = load_layers(&c.layers)?;
    let plan = PlanFile::parse(&read(&c.plan)?)?;
    let kkt = verify_plan(&stats, &plan)?;
    Ok(Outcome {
        document: None,
        out: None,
        summary: format!("verify: ok kkt={kkt} layers={}", stats.len()),
    })
}
