//! Subcommand pipelines: condition checks, solve, verify and oracle runs.

use std::path::{Path, PathBuf};

use semilin::field::SolutionField;
use semilin::geometry::Domain;
use semilin::nonlinearity::Condition;
use semilin::oracles::{
    default_test_functions, duality_residual, dynkin_consistency, fd_solve, radial_solve, FdOptions, OracleError,
    RadialOptions,
};
use semilin::path::PathConfig;
use semilin::rng::derive_seed;
use semilin::solver::{
    martingale_residual, picard_solve, stampacchia_check, uniqueness_probe, ConvergedBy, SolveReport, SolverError,
};

use crate::config::{ConfigError, RunConfig};
use crate::report::{field_csv, join_floats, read_field_csv, write_text, Report, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NonConvergence(_) => 3,
            _ => 2,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonConvergence { .. }
            | SolverError::ExcessiveTruncation { .. }
            | SolverError::NonFiniteEvaluation => CliError::NonConvergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::LinearSolveFailure { .. } | OracleError::NonConvergence { .. } | OracleError::NonFinite => {
                CliError::NonConvergence(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn write(path: PathBuf, text: &str) -> Result<(), CliError> {
    write_text(&path, text).map_err(|source| CliError::Io { path, source })
}

/// Stream tags keeping each verification's randomness apart from the solve.
const REVUZ_STREAM: u64 = 0x5e1;
const MARTINGALE_STREAM: u64 = 0x5e2;
const DYNKIN_STREAM: u64 = 0x5e3;
const CONDITION_STREAM: u64 = 0x5e4;

/// Samples every condition; returns the report lines and whether a
/// declared condition was falsified.
pub fn check_conditions(cfg: &RunConfig) -> (Report, bool) {
    let f = cfg.problem.nonlinearity();
    let mut conditions = vec![Condition::A4, Condition::A4Prime, Condition::A4DoublePrime];
    for c in f.declared() {
        if matches!(c, Condition::A5(_)) {
            conditions.push(*c);
        }
    }
    let seed = derive_seed(cfg.solver.seed, CONDITION_STREAM);
    let mut report = Report::default();
    let mut misdeclared = false;
    for c in conditions {
        let declared = f.declared().contains(&c);
        let r = f.check_condition(c, cfg.problem.domain(), cfg.check.samples, cfg.check.box_radius, seed);
        let verdict = if r.holds_on_sample { "holds" } else { "counterexample" };
        let mut line = format!(
            "{verdict} declared={} samples={}",
            if declared { "yes" } else { "no" },
            r.samples
        );
        if let (false, Some(w)) = (r.holds_on_sample, &r.worst) {
            line.push_str(&format!(" x={:?} y={:?} statistic={:e}", w.x, w.y, w.value));
            if let Some(y2) = &w.y_other {
                line.push_str(&format!(" y_other={y2:?}"));
            }
        }
        report.set(&format!("condition.{}", c.name()), line);
        misdeclared |= declared && !r.holds_on_sample;
    }
    (report, misdeclared)
}

pub fn check(cfg: &RunConfig) -> Result<Report, CliError> {
    let (report, misdeclared) = check_conditions(cfg);
    if misdeclared {
        return Err(CliError::Validation(format!(
            "a declared condition has a counterexample\n{}",
            report.render()
        )));
    }
    Ok(report)
}

fn path_config(cfg: &RunConfig, tag: u64) -> Result<PathConfig, CliError> {
    Ok(cfg.solver.path_config(cfg.problem.domain(), derive_seed(cfg.solver.seed, tag))?)
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let (conditions, misdeclared) = check_conditions(cfg);
    if misdeclared {
        return Err(CliError::Validation(format!(
            "a declared condition has a counterexample\n{}",
            conditions.render()
        )));
    }
    let (u, solved) = picard_solve(&cfg.problem, &cfg.solver)?;
    write(out.join("solution.csv"), &field_csv(&u))?;
    let path_cfg = cfg.solver.path_config(cfg.problem.domain(), cfg.solver.seed)?;
    let meta = format!(
        "seed: {}\nstep: {:e}\nmax_steps: {}\nexit_tolerance: {:e}\npaths_per_node: {}\ntruncated_fraction: {:e}\n",
        cfg.solver.seed, cfg.solver.step, path_cfg.max_steps, path_cfg.exit_tolerance, cfg.solver.paths_per_node,
        solved.truncated_path_fraction
    );
    write(out.join("paths_meta.txt"), &meta)?;

    let mut report = Report::default();
    report.set("command", "solve");
    describe_run(&mut report, cfg, &u);
    report.set("sweeps", solved.sweeps);
    report.set(
        "converged_by",
        match solved.converged_by {
            ConvergedBy::Tolerance => "tolerance",
            ConvergedBy::Exact => "exact",
        },
    );
    report.set("sup_change_history", join_floats(&solved.sup_change));
    report.set("tolerance", format!("{:e}", solved.tolerance));
    report.set("truncation_levels", join_floats(&solved.truncation_levels));
    report.set("median_se", format!("{:e}", solved.median_se));
    report.set("max_se", format!("{:e}", solved.max_se));
    report.set("truncated_path_fraction", format!("{:e}", solved.truncated_path_fraction));
    report.set("sup_u", format!("{:e}", u.sup_norm()));
    let st = stampacchia_check(&u, &cfg.problem)?;
    report.set("stampacchia_lhs", format!("{:e}", st.f_abs_integral));
    report.set("stampacchia_rhs", tightest_bound(&st).map_or("none".to_string(), |b| format!("{b:e}")));
    report.set("barrier_violations", solved.barrier_violations);
    report.set("barrier_violations_after_resample", solved.barrier_violations_after_resample);
    report.verdict(barrier_verdict(&solved));
    verifications(cfg, &u, &mut report)?;
    write(out.join("report.txt"), &report.render())?;
    Ok(report)
}

fn describe_run(report: &mut Report, cfg: &RunConfig, u: &SolutionField) {
    report.set("dimension", cfg.problem.domain().dimension());
    report.set("components", cfg.problem.n_components());
    report.set("grid_resolution", cfg.solver.grid_resolution);
    report.set("interior_nodes", u.interior_nodes().len());
    report.set("paths_per_node", cfg.solver.paths_per_node);
    report.set("step", format!("{:e}", cfg.solver.step));
    report.set("seed", cfg.solver.seed);
}

fn barrier_verdict(solved: &SolveReport) -> Verdict {
    Verdict::check("barrier", solved.barrier_violations_after_resample as f64, 0.0)
}

fn tightest_bound(st: &semilin::solver::StampacchiaReport) -> Option<f64> {
    [st.a4doubleprime, st.a5].iter().flatten().map(|b| b.rhs).reduce(f64::min)
}

pub fn verify(cfg: &RunConfig, solution: &Path, out: &Path) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(solution).map_err(|source| CliError::Io {
        path: solution.to_path_buf(),
        source,
    })?;
    let grid = cfg.solver.grid(cfg.problem.domain());
    let u = read_field_csv(&text, cfg.problem.domain(), grid, cfg.problem.n_components())
        .map_err(|e| CliError::Validation(format!("{}: {e}", solution.display())))?;
    let mut report = Report::default();
    report.set("command", "verify");
    report.set("solution", solution.display());
    describe_run(&mut report, cfg, &u);
    let st = stampacchia_check(&u, &cfg.problem)?;
    report.set("stampacchia_lhs", format!("{:e}", st.f_abs_integral));
    report.set("stampacchia_rhs", tightest_bound(&st).map_or("none".to_string(), |b| format!("{b:e}")));
    verifications(cfg, &u, &mut report)?;
    write(out.join("verify_report.txt"), &report.render())?;
    Ok(report)
}

/// Interior point used by the martingale and localization checks: the
/// bounding-box centre when it lies in Ω, else the deepest grid node.
fn probe_point(cfg: &RunConfig, u: &SolutionField) -> Vec<f64> {
    if let Some(s) = &cfg.verify.martingale_start {
        return s.clone();
    }
    let domain = cfg.problem.domain();
    let (lo, hi) = domain.bounding_box();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    if domain.sdf(&mid) > 0.0 {
        return mid;
    }
    u.interior_nodes()
        .into_iter()
        .map(|n| u.grid().position(n))
        .max_by(|a, b| domain.sdf(a).total_cmp(&domain.sdf(b)))
        .unwrap_or(mid)
}

/// Largest |value| / budget over all entries.
fn worst_ratio<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    pairs
        .map(|(v, b)| if *b > 0.0 { v.abs() / b } else if *v == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

fn verifications(cfg: &RunConfig, u: &SolutionField, report: &mut Report) -> Result<(), CliError> {
    let v = &cfg.verify;
    if !v.any_enabled() {
        report.set("checks", "no checks enabled");
        return Ok(());
    }
    let problem = &cfg.problem;
    let domain = problem.domain();

    if v.revuz {
        let pc = path_config(cfg, REVUZ_STREAM)?;
        for (k, m) in problem.measures().iter().enumerate() {
            let name = format!("revuz.{}", k + 1);
            if m.is_zero() {
                report.set(&name, "zero measure, skipped");
                continue;
            }
            let r = m
                .revuz_check(domain, |_| 1.0, |_| 1.0, v.revuz_time, v.revuz_paths, &pc)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            report.set(&name, format!("lhs={:e} rhs={:e} pooled_se={:e}", r.lhs.mean, r.rhs.mean, r.pooled_se));
            report.verdict(Verdict::check(name, (r.lhs.mean - r.rhs.mean).abs(), 3.0 * r.pooled_se));
        }
    }

    let probe = probe_point(cfg, u);
    if v.martingale {
        let pc = path_config(cfg, MARTINGALE_STREAM)?;
        let pts = martingale_residual(u, problem, &probe, v.martingale_paths, &v.martingale_checkpoints, &pc)?;
        for p in &pts {
            report.set(
                &format!("martingale.t{}", p.time),
                format!("mean={} budget={}", join_floats(&p.mean), join_floats(&p.budget)),
            );
        }
        let ratio = worst_ratio(pts.iter().flat_map(|p| p.mean.iter().zip(&p.budget)));
        report.verdict(Verdict::check("martingale", ratio, 1.0));
    }

    if v.stampacchia {
        let st = stampacchia_check(u, problem)?;
        match tightest_bound(&st) {
            Some(rhs) => report.verdict(Verdict::check("stampacchia", st.f_abs_integral, 1.05 * rhs)),
            // only the angle condition is declared: nothing to assert
            None => report.verdict(Verdict::info("stampacchia", st.f_abs_integral)),
        }
    }

    if v.duality {
        let tests = default_test_functions(domain);
        let res = duality_residual(u, problem, &tests)?;
        for r in &res {
            report.set(
                &format!("duality.test{}.u{}", r.test + 1, r.component + 1),
                format!(
                    "residual={:e} budget={:e} mollification_bias={:e}",
                    r.residual,
                    r.budget,
                    r.exact_data - r.data
                ),
            );
        }
        let ratio = worst_ratio(res.iter().map(|r| (&r.residual, &r.budget)));
        report.verdict(Verdict::check("duality", ratio, 1.0));
    }

    if v.dynkin {
        let pc = path_config(cfg, DYNKIN_STREAM)?;
        let radius = v.dynkin_radius_fraction * domain.sdf(&probe);
        let g = Domain::ball(probe.clone(), radius).map_err(|e| CliError::Validation(e.to_string()))?;
        let mut starts = vec![probe.clone()];
        for axis in 0..domain.dimension().min(2) {
            for s in [-0.5, 0.5] {
                let mut p = probe.clone();
                p[axis] += s * radius;
                starts.push(p);
            }
        }
        let pts = dynkin_consistency(u, problem, &g, &starts, v.dynkin_paths, &pc)?;
        for (i, p) in pts.iter().enumerate() {
            report.set(
                &format!("dynkin.start{}", i + 1),
                format!(
                    "x={:?} discrepancy={} budget={}",
                    p.start,
                    join_floats(&p.discrepancy),
                    join_floats(&p.budget)
                ),
            );
        }
        let ratio = worst_ratio(pts.iter().flat_map(|p| p.discrepancy.iter().zip(&p.budget)));
        report.verdict(Verdict::check("dynkin", ratio, 1.0));
    }

    if v.uniqueness_probe {
        if !problem.nonlinearity().declares(|c| matches!(c, Condition::A4Prime)) {
            report.set("uniqueness_probe", "skipped, A4prime not declared");
        } else {
            let zero = SolutionField::zeros(domain, u.grid().clone(), u.components());
            let guesses = [zero, u.clone(), u.scaled(2.0)];
            let r = uniqueness_probe(problem, &cfg.solver, &guesses)?;
            let ratio = r
                .pairs
                .iter()
                .map(|(_, _, dist, thr)| if *thr > 0.0 { dist / thr } else if *dist == 0.0 { 0.0 } else { f64::INFINITY })
                .fold(0.0, f64::max);
            report.set("uniqueness_probe", format!("max_distance={:e} guesses=zero,input,2*input", r.max_distance));
            report.verdict(Verdict::check("uniqueness_probe", ratio, 1.0));
        }
    }
    Ok(())
}

/// Deterministic reference: the radial ODE when the data are radial,
/// finite differences in the plane otherwise.
pub fn oracle(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let problem = &cfg.problem;
    let domain = problem.domain();
    let grid = cfg.solver.grid(domain);
    let mut report = Report::default();
    report.set("command", "oracle");
    let n = problem.n_components();
    let field = match radial_solve(problem, &RadialOptions { points: cfg.oracle.radial_points, ..RadialOptions::default() }) {
        Ok(profile) => {
            report.set("oracle", "radial");
            report.set("iterations", profile.iterations);
            report.set("discretization_error", format!("{:e}", profile.discretization_error));
            SolutionField::from_fn(domain, grid, n, |x, o| o.copy_from_slice(&profile.evaluate(x)))
        }
        Err(OracleError::NotRadial(why) | OracleError::UnsupportedDomain(why)) if domain.dimension() == 2 => {
            let opts = FdOptions {
                grid_resolution: cfg.oracle.fd_resolution,
                ..FdOptions::default()
            };
            let (fd, fr) = fd_solve(problem, &opts)?;
            report.set("oracle", "finite_difference");
            report.set("radial_unavailable", why);
            report.set("fd_resolution", cfg.oracle.fd_resolution);
            report.set("sweeps", fr.sweeps);
            report.set("sor_iterations", fr.sor_iterations);
            SolutionField::from_fn(domain, grid, n, |x, o| o.copy_from_slice(&fd.evaluate(x)))
        }
        Err(e) => return Err(e.into()),
    };
    report.set("interior_nodes", field.interior_nodes().len());
    report.set("sup_u", format!("{:e}", field.sup_norm()));
    write(out.join("oracle.csv"), &field_csv(&field))?;
    write(out.join("oracle_report.txt"), &report.render())?;
    Ok(report)
}
