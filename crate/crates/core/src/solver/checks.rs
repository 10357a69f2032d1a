//! Posterior checks on a computed field.

use rayon::prelude::*;

use super::{picard_solve_from, Problem, SolveReport, SolverConfig, SolverError};
use crate::field::SolutionField;
use crate::nonlinearity::Condition;
use crate::path::{PathConfig, Trapezoid, Visit, WalkEnd, WalkState, Walker};
use crate::quadrature::integrate_domain;
use crate::stats::Moments;

/// D(t) = u(X_{t∧ζ}) − u(X₀) + ∫₀^{t∧ζ} f(u)(X_s) ds + A^μ_{t∧ζ} at one
/// checkpoint, per component.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePoint {
    pub time: f64,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// 3·(path SE ⊕ field SE) plus interpolation and f-propagation bias.
    pub budget: Vec<f64>,
    pub passed: bool,
}

/// Mean of D(t) at each checkpoint for paths from `start`; zero in
/// expectation when u solves the problem.
pub fn martingale_residual(
    u: &SolutionField,
    problem: &Problem,
    start: &[f64],
    n_paths: usize,
    checkpoints: &[f64],
    cfg: &PathConfig,
) -> Result<Vec<MartingalePoint>, SolverError> {
    let domain = problem.domain();
    if domain.sdf(start) <= 0.0 {
        return Err(SolverError::InvalidParameter("martingale start outside the domain".into()));
    }
    let n = problem.n_components();
    let d = domain.dimension();
    let f = problem.nonlinearity();
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by(|&a, &b| checkpoints[a].total_cmp(&checkpoints[b]));
    let stops: Vec<usize> = order.iter().map(|&i| (checkpoints[i] / cfg.step).round() as usize).collect();
    let u0 = u.evaluate(start);
    let walker = Walker::new(domain, cfg);
    let c = checkpoints.len();

    // per path: c·n residuals, then c·n field-SE values, c interpolation
    // errors and c·n f-propagation bounds at the stop points
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut acc = Trapezoid::new(cfg.step, 2 * n);
            let mut state = WalkState::new(d);
            let mut uval = vec![0.0; n];
            let mut se = vec![0.0; n];
            let mut pert = vec![0.0; n];
            let mut fv = vec![0.0; n];
            let mut fp = vec![0.0; n];
            let mut g = vec![0.0; 2 * n];
            let mut out = vec![0.0; 2 * n];
            let mut rec = vec![0.0; c * (3 * n + 1)];
            let mut next = 0;
            let end = walker.walk(start, p, &mut state, |j, x| {
                u.interpolate_into(x, &mut uval);
                u.se_into(x, &mut se);
                let ie = u.interpolation_error(x);
                f.evaluate_into(x, &uval, &mut fv);
                for k in 0..n {
                    pert[k] = uval[k] + se[k] + ie;
                }
                f.evaluate_into(x, &pert, &mut fp);
                for k in 0..n {
                    g[k] = fv[k] + problem.measures()[k].density_at(x);
                    g[n + k] = (fp[k] - fv[k]).abs();
                }
                acc.push(&g);
                while next < c && stops[next] == j {
                    acc.stopped(&mut out);
                    let ci = order[next];
                    for k in 0..n {
                        rec[ci * n + k] = uval[k] - u0[k] + out[k];
                        rec[c * n + ci * n + k] = se[k];
                        rec[2 * c * n + ci * n + k] = out[n + k];
                    }
                    rec[3 * c * n + ci] = ie;
                    next += 1;
                }
                if next == c {
                    Visit::Stop
                } else {
                    Visit::Continue
                }
            });
            if let WalkEnd::Killed(_) | WalkEnd::Truncated(_) = end {
                acc.finish(end, &mut out);
                while next < c {
                    let ci = order[next];
                    for k in 0..n {
                        // u vanishes at the killed point
                        rec[ci * n + k] = -u0[k] + out[k];
                        rec[2 * c * n + ci * n + k] = out[n + k];
                    }
                    next += 1;
                }
            }
            rec
        })
        .collect();

    let mean_of = |idx: usize| per_path.iter().map(|r| r[idx]).sum::<f64>() / n_paths.max(1) as f64;
    let start_se = u.se_at_point(start);
    let start_ie = u.interpolation_error(start);
    let mut points = Vec::with_capacity(c);
    for (ci, &time) in checkpoints.iter().enumerate() {
        let mut mean = Vec::with_capacity(n);
        let mut ses = Vec::with_capacity(n);
        let mut budget = Vec::with_capacity(n);
        let stop_ie = mean_of(3 * c * n + ci);
        for k in 0..n {
            let m: Moments = per_path.iter().map(|r| r[ci * n + k]).collect();
            let e = m.estimate();
            let field_se = mean_of(c * n + ci * n + k);
            let f_bias = mean_of(2 * c * n + ci * n + k);
            let noise = (e.se * e.se + start_se[k] * start_se[k] + field_se * field_se).sqrt();
            mean.push(e.mean);
            ses.push(e.se);
            budget.push(3.0 * noise + start_ie + stop_ie + f_bias);
        }
        let passed = mean.iter().zip(&budget).all(|(m, b)| m.abs() <= *b);
        points.push(MartingalePoint {
            time,
            mean,
            se: ses,
            budget,
            passed,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampacchiaBound {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampacchiaReport {
    /// ∫_Ω Σ_k |fᵏ(x, u(x))| dx, reported whatever the declared conditions.
    pub f_abs_integral: f64,
    pub quadrature_error: f64,
    pub total_variation: f64,
    /// Bound by ‖μ‖_TV, when A4″ is declared.
    pub a4doubleprime: Option<StampacchiaBound>,
    /// Bound by α⁻¹‖μ‖_TV, when A5(α) is declared.
    pub a5: Option<StampacchiaBound>,
}

pub fn stampacchia_check(u: &SolutionField, problem: &Problem) -> Result<StampacchiaReport, SolverError> {
    let domain = problem.domain();
    let f = problem.nonlinearity();
    let n = problem.n_components();
    let cells = u.grid().nodes_per_axis().iter().copied().max().unwrap_or(2).saturating_sub(1).max(2);
    let integrand = |x: &[f64]| {
        let uv = u.evaluate(x);
        let mut out = vec![0.0; n];
        f.evaluate_into(x, &uv, &mut out);
        out.iter().map(|v| v.abs()).sum::<f64>()
    };
    let q = integrate_domain(domain, cells, 2, integrand);
    let (tv, _) = problem.total_variation()?;
    let bound = |lhs: f64, rhs: f64| StampacchiaBound {
        lhs,
        rhs,
        ok: lhs <= 1.05 * rhs,
    };
    let a4pp = f
        .declares(|c| matches!(c, Condition::A4DoublePrime))
        .then(|| bound(q.value, tv));
    let a5 = f.uniform_rate().map(|alpha| bound(q.value, tv / alpha));
    Ok(StampacchiaReport {
        f_abs_integral: q.value,
        quadrature_error: q.error,
        total_variation: tv,
        a4doubleprime: a4pp,
        a5,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub fields: Vec<SolutionField>,
    pub reports: Vec<SolveReport>,
    /// (i, j, sup distance, 3·max pooled node SE).
    pub pairs: Vec<(usize, usize, f64, f64)>,
    pub max_distance: f64,
    pub passed: bool,
}

/// Solves from each initial guess and compares the converged fields.
pub fn uniqueness_probe(
    problem: &Problem,
    cfg: &SolverConfig,
    guesses: &[SolutionField],
) -> Result<UniquenessReport, SolverError> {
    if !problem.nonlinearity().declares(|c| matches!(c, Condition::A4Prime)) {
        return Err(SolverError::MonotonicityNotDeclared);
    }
    let mut fields = Vec::with_capacity(guesses.len());
    let mut reports = Vec::with_capacity(guesses.len());
    for g in guesses {
        let (field, report) = picard_solve_from(problem, cfg, g)?;
        fields.push(field);
        reports.push(report);
    }
    let mut pairs = Vec::new();
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            let dist = fields[i].sup_distance(&fields[j]);
            let pooled = fields[i]
                .standard_errors()
                .iter()
                .zip(fields[j].standard_errors())
                .map(|(a, b)| (a * a + b * b).sqrt())
                .fold(0.0, f64::max);
            pairs.push((i, j, dist, 3.0 * pooled));
        }
    }
    let max_distance = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let passed = pairs.iter().all(|p| p.2 <= p.3);
    Ok(UniquenessReport {
        fields,
        reports,
        pairs,
        max_distance,
        passed,
    })
}
