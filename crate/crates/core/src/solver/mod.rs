//! Picard iteration on the representation
//! u(x) = E_x[∫₀^ζ f(x, u)(X_t) dt + A^μ_ζ],
//! with node values stored on a grid and interpolated along paths.

mod checks;
mod sweep;

pub use checks::{
    martingale_residual, stampacchia_check, uniqueness_probe, MartingalePoint, StampacchiaBound, StampacchiaReport,
    UniquenessReport,
};

use thiserror::Error;

use crate::field::{Grid, SolutionField};
use crate::geometry::Domain;
use crate::measure::{DiffuseMeasure, MeasureError};
use crate::nonlinearity::{truncation_level, Nonlinearity};
use crate::path::{PathConfig, PathError, DISCRETE_MONITORING_SHIFT};
use crate::rng::derive_seed;
use crate::stats::median;
use sweep::{NodeEstimate, Sweep};

const TAG_CRN: u64 = 0x4352_4e00;
const TAG_FINAL: u64 = 0x4649_4e41;
const TAG_BARRIER: u64 = 0x4241_5252;
const TAG_RESAMPLE: u64 = 0x5245_5341;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("{measures} measures given for {components} components")]
    ComponentMismatch { measures: usize, components: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("nonlinearity does not declare the angle condition (A4 or stronger)")]
    AngleConditionNotDeclared,
    #[error("nonlinearity does not declare the monotonicity condition A4prime")]
    MonotonicityNotDeclared,
    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),
    #[error("{fraction:.4} of the paths hit the step limit (more than 1%)")]
    ExcessiveTruncation { fraction: f64 },
    #[error("f produced non-finite values along the paths")]
    NonFiniteEvaluation,
    #[error("no convergence after {sweeps} sweeps (last change {last_change:.3e}, tolerance {tolerance:.3e})")]
    NonConvergence {
        sweeps: usize,
        last_change: f64,
        tolerance: f64,
    },
    #[error("|u| exceeds the barrier at {nodes} nodes after resampling")]
    BarrierViolation { nodes: usize },
    #[error("initial guess lives on a different grid")]
    GridMismatch,
}

/// −½Δuᵏ = fᵏ(x, u) + μᵏ in Ω, u = 0 on ∂Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    domain: Domain,
    measures: Vec<DiffuseMeasure>,
    nonlinearity: Nonlinearity,
}

impl Problem {
    pub fn new(domain: Domain, measures: Vec<DiffuseMeasure>, nonlinearity: Nonlinearity) -> Result<Self, SolverError> {
        if measures.len() != nonlinearity.n_components() {
            return Err(SolverError::ComponentMismatch {
                measures: measures.len(),
                components: nonlinearity.n_components(),
            });
        }
        for m in &measures {
            m.validate(&domain)?;
        }
        Ok(Self {
            domain,
            measures,
            nonlinearity,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn measures(&self) -> &[DiffuseMeasure] {
        &self.measures
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn n_components(&self) -> usize {
        self.measures.len()
    }

    /// Σ_k ‖μᵏ‖_TV and its quadrature error.
    pub fn total_variation(&self) -> Result<(f64, f64), SolverError> {
        let mut v = 0.0;
        let mut e = 0.0;
        for m in &self.measures {
            let tv = m.total_variation(&self.domain)?;
            v += tv.value;
            e += tv.error;
        }
        Ok((v, e))
    }

    pub fn with_measures(&self, measures: Vec<DiffuseMeasure>) -> Result<Self, SolverError> {
        Self::new(self.domain.clone(), measures, self.nonlinearity.clone())
    }

    fn density_sup(&self) -> f64 {
        self.measures
            .iter()
            .map(|m| m.sampled_density_sup(&self.domain))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub grid_resolution: usize,
    pub paths_per_node: usize,
    pub step: f64,
    pub max_sweeps: usize,
    /// Fixed Picard tolerance; default max(3·median SE, 10⁻³·sup|u|).
    pub tol: Option<f64>,
    /// θ in u ← (1−θ)u + θ·estimate.
    pub damping: f64,
    /// n₀ in the truncation schedule n(m) = n₀·2^m.
    pub truncation_base: f64,
    pub seed: u64,
    pub max_steps: Option<usize>,
    pub exit_tolerance_factor: f64,
    /// Fail when |u| > v + 3·SE survives one resample.
    pub fail_on_barrier_violation: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 33,
            paths_per_node: 1000,
            step: 1e-3,
            max_sweeps: 30,
            tol: None,
            damping: 1.0,
            truncation_base: 8.0,
            seed: 0,
            max_steps: None,
            exit_tolerance_factor: DISCRETE_MONITORING_SHIFT,
            fail_on_barrier_violation: true,
        }
    }
}

impl SolverConfig {
    pub fn path_config(&self, domain: &Domain, seed: u64) -> Result<PathConfig, SolverError> {
        let max_steps = self
            .max_steps
            .unwrap_or_else(|| PathConfig::default_max_steps(domain, self.step));
        let cfg = PathConfig::new(self.step, max_steps, self.exit_tolerance_factor, seed)?;
        cfg.validate(domain)?;
        Ok(cfg)
    }

    pub fn grid(&self, domain: &Domain) -> Grid {
        Grid::for_domain(domain, self.grid_resolution)
    }

    fn validate(&self) -> Result<(), SolverError> {
        let bad = |s: String| Err(SolverError::InvalidParameter(s));
        if self.grid_resolution < 3 {
            return bad(format!("grid_resolution {} < 3", self.grid_resolution));
        }
        if self.paths_per_node < 2 {
            return bad(format!("paths_per_node {} < 2", self.paths_per_node));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping {} outside (0, 1]", self.damping));
        }
        if !(self.truncation_base > 0.0 && self.truncation_base.is_finite()) {
            return bad(format!("truncation_base {}", self.truncation_base));
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergedBy {
    /// Two consecutive sweeps below tolerance with truncation inactive.
    Tolerance,
    /// f ≡ 0: the representation does not depend on the iterate, so one
    /// application is the fixed point.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub sweeps: usize,
    pub sup_change: Vec<f64>,
    pub tolerance: f64,
    pub converged_by: ConvergedBy,
    pub paths_per_node: usize,
    pub truncation_levels: Vec<f64>,
    pub interior_nodes: usize,
    pub median_se: f64,
    pub max_se: f64,
    pub barrier: SolutionField,
    /// Nodes with |u| > v + 3·SE in the first comparison.
    pub barrier_violations: usize,
    /// Nodes still violating after resampling the above.
    pub barrier_violations_after_resample: usize,
    pub truncated_path_fraction: f64,
    /// Whether the final sweep truncated any value of f.
    pub truncation_active_at_end: bool,
}

fn starts_and_offsets(field: &SolutionField, nodes: &[usize], paths: usize) -> (Vec<Vec<f64>>, Vec<u64>) {
    let starts = nodes.iter().map(|&n| field.grid().position(n)).collect();
    let offsets = nodes.iter().map(|&n| n as u64 * paths as u64).collect();
    (starts, offsets)
}

struct SweepTotals {
    truncated: usize,
    paths: usize,
    truncation_active: bool,
}

fn check_totals(results: &[NodeEstimate], paths: usize) -> Result<SweepTotals, SolverError> {
    if results.iter().any(|r| r.non_finite) {
        return Err(SolverError::NonFiniteEvaluation);
    }
    let truncated = results.iter().map(|r| r.truncated_paths).sum();
    let total = results.len() * paths;
    let t = SweepTotals {
        truncated,
        paths: total,
        truncation_active: results.iter().any(|r| r.truncation_active),
    };
    let fraction = truncated as f64 / total.max(1) as f64;
    if fraction > 0.01 {
        return Err(SolverError::ExcessiveTruncation { fraction });
    }
    Ok(t)
}

/// Barrier v(x) = E_x ∫₀^ζ d(Σ_k |A^{μᵏ}|) at the interior nodes, as a
/// scalar field, together with the truncated-path fraction.
pub fn estimate_barrier(problem: &Problem, cfg: &SolverConfig) -> Result<(SolutionField, f64), SolverError> {
    cfg.validate()?;
    let domain = problem.domain();
    let path_cfg = cfg.path_config(domain, derive_seed(cfg.seed, TAG_BARRIER))?;
    let mut v = SolutionField::zeros(domain, cfg.grid(domain), 1);
    let nodes = v.interior_nodes();
    let (starts, offsets) = starts_and_offsets(&v, &nodes, cfg.paths_per_node);
    let sweep = Sweep {
        domain,
        nonlinearity: problem.nonlinearity(),
        measures: problem.measures(),
        iterate: None,
        level: f64::INFINITY,
        solution: false,
        barrier: true,
        cfg: &path_cfg,
        paths: cfg.paths_per_node,
    };
    let results = sweep.run(&starts, &offsets);
    let totals = check_totals(&results, cfg.paths_per_node)?;
    for (&node, r) in nodes.iter().zip(&results) {
        let b = r.barrier.expect("barrier requested");
        v.set_node(node, &[b.mean], &[b.se]);
    }
    Ok((v, totals.truncated as f64 / totals.paths.max(1) as f64))
}

/// Picard iteration from u⁽⁰⁾ = 0.
pub fn picard_solve(problem: &Problem, cfg: &SolverConfig) -> Result<(SolutionField, SolveReport), SolverError> {
    solve_impl(problem, cfg, None)
}

/// Picard iteration from a given initial field (same grid as `cfg`).
pub fn picard_solve_from(
    problem: &Problem,
    cfg: &SolverConfig,
    initial: &SolutionField,
) -> Result<(SolutionField, SolveReport), SolverError> {
    solve_impl(problem, cfg, Some(initial))
}

fn solve_impl(
    problem: &Problem,
    cfg: &SolverConfig,
    initial: Option<&SolutionField>,
) -> Result<(SolutionField, SolveReport), SolverError> {
    cfg.validate()?;
    if !problem.nonlinearity().declares_angle_condition() {
        return Err(SolverError::AngleConditionNotDeclared);
    }
    let domain = problem.domain();
    let n = problem.n_components();
    let paths = cfg.paths_per_node;
    let grid = cfg.grid(domain);
    let template = SolutionField::zeros(domain, grid, n);
    if let Some(init) = initial {
        if !init.has_same_grid(&template) {
            return Err(SolverError::GridMismatch);
        }
    }
    let nodes = template.interior_nodes();
    let (starts, offsets) = starts_and_offsets(&template, &nodes, paths);
    let crn_cfg = cfg.path_config(domain, derive_seed(cfg.seed, TAG_CRN))?;
    let final_cfg = cfg.path_config(domain, derive_seed(cfg.seed, TAG_FINAL))?;
    let density_sup = problem.density_sup();

    let mut current = initial.cloned().unwrap_or_else(|| template.clone());
    let mut sup_change = Vec::new();
    let mut levels = Vec::new();
    let mut barrier = SolutionField::zeros(domain, template.grid().clone(), 1);
    let mut truncated = 0usize;
    let mut total_paths = 0usize;
    let mut tolerance = cfg.tol.unwrap_or(0.0);
    let zero_f = problem.nonlinearity().is_zero();

    let store_barrier = |barrier: &mut SolutionField, results: &[NodeEstimate]| {
        for (&node, r) in nodes.iter().zip(results) {
            let b = r.barrier.expect("barrier requested");
            barrier.set_node(node, &[b.mean], &[b.se]);
        }
    };

    let (converged_by, final_level) = if zero_f {
        (ConvergedBy::Exact, f64::INFINITY)
    } else {
        let mut streak = 0;
        let mut converged = None;
        for m in 0..cfg.max_sweeps {
            let level = truncation_level(cfg.truncation_base, m);
            levels.push(level);
            let measures: Vec<DiffuseMeasure> = problem.measures().iter().map(|mu| mu.restricted(level)).collect();
            let sweep = Sweep {
                domain,
                nonlinearity: problem.nonlinearity(),
                measures: &measures,
                iterate: Some(&current),
                level,
                solution: true,
                barrier: m == 0,
                cfg: &crn_cfg,
                paths,
            };
            let results = sweep.run(&starts, &offsets);
            let totals = check_totals(&results, paths)?;
            truncated += totals.truncated;
            total_paths += totals.paths;
            if m == 0 {
                store_barrier(&mut barrier, &results);
            }
            let theta = cfg.damping;
            let mut next = current.clone();
            for (&node, r) in nodes.iter().zip(&results) {
                let old = current.node_values(node);
                let vals: Vec<f64> = old.iter().zip(&r.mean).map(|(o, e)| (1.0 - theta) * o + theta * e).collect();
                let se: Vec<f64> = r.se.iter().map(|s| theta * s).collect();
                next.set_node(node, &vals, &se);
            }
            let change = next.sup_distance(&current);
            sup_change.push(change);
            current = next;
            let scale = current.sup_norm();
            tolerance = cfg.tol.unwrap_or_else(|| {
                let mut se: Vec<f64> = results.iter().flat_map(|r| r.se.iter().copied()).collect();
                (3.0 * median(&mut se)).max(1e-3 * scale)
            });
            streak = if change <= tolerance { streak + 1 } else { 0 };
            let inactive = level > scale && level > density_sup && !totals.truncation_active;
            if streak >= 2 && inactive {
                converged = Some(level);
                break;
            }
        }
        match converged {
            Some(level) => (ConvergedBy::Tolerance, level),
            None => {
                return Err(SolverError::NonConvergence {
                    sweeps: sup_change.len(),
                    last_change: sup_change.last().copied().unwrap_or(f64::NAN),
                    tolerance,
                })
            }
        }
    };

    // Final sweep on fresh paths produces the reported field.
    let measures: Vec<DiffuseMeasure> = problem
        .measures()
        .iter()
        .map(|mu| mu.restricted(final_level))
        .collect();
    let final_sweep = Sweep {
        domain,
        nonlinearity: problem.nonlinearity(),
        measures: &measures,
        iterate: Some(&current),
        level: final_level,
        solution: true,
        barrier: zero_f,
        cfg: &final_cfg,
        paths,
    };
    let results = final_sweep.run(&starts, &offsets);
    let totals = check_totals(&results, paths)?;
    truncated += totals.truncated;
    total_paths += totals.paths;
    if zero_f {
        store_barrier(&mut barrier, &results);
    }
    let mut field = template.clone();
    for (&node, r) in nodes.iter().zip(&results) {
        field.set_node(node, &r.mean, &r.se);
    }
    if zero_f {
        sup_change.push(field.sup_distance(&current));
        levels.push(final_level);
    }

    // Barrier domination, one resample of the violating nodes.
    let violating = barrier_violations(&field, &barrier, &nodes);
    let first_count = violating.len();
    let mut remaining = 0;
    if !violating.is_empty() {
        let resample_cfg = cfg.path_config(domain, derive_seed(cfg.seed, TAG_RESAMPLE))?;
        let (rs, ro) = starts_and_offsets(&template, &violating, paths);
        let sweep = Sweep {
            barrier: true,
            cfg: &resample_cfg,
            ..final_sweep
        };
        let again = sweep.run(&rs, &ro);
        for (&node, r) in violating.iter().zip(&again) {
            field.set_node(node, &r.mean, &r.se);
            let b = r.barrier.expect("barrier requested");
            barrier.set_node(node, &[b.mean], &[b.se]);
        }
        remaining = barrier_violations(&field, &barrier, &violating).len();
        if remaining > 0 && cfg.fail_on_barrier_violation {
            return Err(SolverError::BarrierViolation { nodes: remaining });
        }
    }

    let report = SolveReport {
        sweeps: sup_change.len(),
        sup_change,
        tolerance,
        converged_by,
        paths_per_node: paths,
        truncation_levels: levels,
        interior_nodes: nodes.len(),
        median_se: field.median_se(),
        max_se: field.max_se(),
        barrier,
        barrier_violations: first_count,
        barrier_violations_after_resample: remaining,
        truncated_path_fraction: truncated as f64 / total_paths.max(1) as f64,
        truncation_active_at_end: totals.truncation_active,
    };
    Ok((field, report))
}

/// Nodes where |u|₂ > v + 3·sqrt(Σ se_k² + se_v²).
pub fn barrier_violations(field: &SolutionField, barrier: &SolutionField, nodes: &[usize]) -> Vec<usize> {
    nodes
        .iter()
        .copied()
        .filter(|&node| {
            let u = field.node_values(node);
            let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let se2: f64 = field.node_se(node).iter().map(|s| s * s).sum::<f64>() + barrier.node_se(node)[0].powi(2);
            norm > barrier.node_values(node)[0] + 3.0 * se2.sqrt()
        })
        .collect()
}
