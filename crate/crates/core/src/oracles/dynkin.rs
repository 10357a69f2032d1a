//! Localization check on a sub-domain G ⊆ Ω: for a solution u,
//! u(x) = E_x[u(X_{τ_G∧ζ}) + ∫₀^{τ_G∧ζ} f(u)(X_t) dt + A^μ_{τ_G∧ζ}].

use rayon::prelude::*;

use crate::field::SolutionField;
use crate::geometry::Domain;
use crate::path::{PathConfig, Trapezoid, Visit, WalkEnd, WalkState, Walker};
use crate::rng::stream_rng;
use crate::solver::Problem;
use crate::stats::Moments;

use super::OracleError;

#[derive(Debug, Clone, PartialEq)]
pub struct DynkinPoint {
    pub start: Vec<f64>,
    /// Estimate minus u(start), per component.
    pub discrepancy: Vec<f64>,
    pub se: Vec<f64>,
    /// 3·(path SE ⊕ field SE) plus interpolation and f-propagation bias.
    pub budget: Vec<f64>,
    /// Fraction of paths that left G before being killed.
    pub exited_g: f64,
    pub passed: bool,
}

/// Runs `n_paths` killed walks in Ω from each start and stops them on
/// leaving G, judged with the same shifted threshold that kills them in Ω.
pub fn dynkin_consistency(
    u: &SolutionField,
    problem: &Problem,
    g_domain: &Domain,
    starts: &[Vec<f64>],
    n_paths: usize,
    cfg: &PathConfig,
) -> Result<Vec<DynkinPoint>, OracleError> {
    let domain = problem.domain();
    let d = domain.dimension();
    if g_domain.dimension() != d {
        return Err(OracleError::NotSubdomain);
    }
    check_subdomain(domain, g_domain)?;
    for s in starts {
        if s.len() != d || g_domain.sdf(s) <= 0.0 || domain.sdf(s) <= 0.0 {
            return Err(OracleError::StartOutside(s.clone()));
        }
    }
    let n = problem.n_components();
    let f = problem.nonlinearity();
    let delta = cfg.exit_tolerance;
    let walker = Walker::new(domain, cfg);

    starts
        .par_iter()
        .enumerate()
        .map(|(si, start)| {
            let u0 = u.evaluate(start);
            let mut acc = Trapezoid::new(cfg.step, 2 * n);
            let mut state = WalkState::new(d);
            let (mut uval, mut se, mut pert, mut fv, mut fp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let mut g = vec![0.0; 2 * n];
            let mut out = vec![0.0; 2 * n];
            let mut value = vec![Moments::new(); n];
            let mut exit_se = vec![0.0; n];
            let mut f_bias = vec![0.0; n];
            let mut exit_ie = 0.0;
            let mut exited = 0usize;
            let offset = si as u64 * n_paths as u64;
            for p in 0..n_paths as u64 {
                acc.reset();
                let mut exit_state: Option<(Vec<f64>, f64)> = None;
                let end = walker.walk(start, offset + p, &mut state, |_, x| {
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
                    if g_domain.sdf(x) <= delta {
                        exit_state = Some((se.clone(), ie));
                        return Visit::Stop;
                    }
                    Visit::Continue
                });
                acc.finish(end, &mut out);
                // killed paths end at u = 0; stopped and truncated ones at the
                // last visited point, whose value is still in `uval`
                let end_value = |k: usize| if matches!(end, WalkEnd::Killed(_)) { 0.0 } else { uval[k] };
                for k in 0..n {
                    value[k].push(end_value(k) + out[k] - u0[k]);
                    f_bias[k] += out[n + k];
                }
                if let Some((see, ie)) = &exit_state {
                    exited += 1;
                    for k in 0..n {
                        exit_se[k] += see[k];
                    }
                    exit_ie += ie;
                }
            }
            let np = n_paths.max(1) as f64;
            let start_se = u.se_at_point(start);
            let start_ie = u.interpolation_error(start);
            let mut discrepancy = Vec::with_capacity(n);
            let mut ses = Vec::with_capacity(n);
            let mut budget = Vec::with_capacity(n);
            for k in 0..n {
                let e = value[k].estimate();
                let field_se = exit_se[k] / np;
                let noise = (e.se * e.se + start_se[k] * start_se[k] + field_se * field_se).sqrt();
                discrepancy.push(e.mean);
                ses.push(e.se);
                budget.push(3.0 * noise + start_ie + exit_ie / np + f_bias[k] / np);
            }
            let passed = discrepancy.iter().zip(&budget).all(|(m, b)| m.abs() <= *b);
            Ok(DynkinPoint {
                start: start.clone(),
                discrepancy,
                se: ses,
                budget,
                exited_g: exited as f64 / np,
                passed,
            })
        })
        .collect()
}

/// Samples G uniformly and requires every sample to lie in Ω.
fn check_subdomain(domain: &Domain, g: &Domain) -> Result<(), OracleError> {
    let mut rng = stream_rng(0x9d0_ca1e, 0);
    for _ in 0..4000 {
        let x = g.sample_interior(&mut rng).map_err(|_| OracleError::NotSubdomain)?;
        if domain.sdf(&x) <= 0.0 {
            return Err(OracleError::NotSubdomain);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, Scope};
    use crate::field::Grid;
    use crate::measure::DiffuseMeasure;
    use crate::nonlinearity::Nonlinearity;

    fn linear_disk(scale: f64) -> (Problem, SolutionField, PathConfig) {
        let dom = Domain::unit_ball(2);
        let mu = DiffuseMeasure::density(2, 0.05, Expr::parse("1", Scope::spatial(2)).unwrap());
        let p = Problem::new(dom.clone(), vec![mu], Nonlinearity::zero(1)).unwrap();
        let u = SolutionField::from_fn(&dom, Grid::for_domain(&dom, 33), 1, |x, o| {
            o[0] = scale * (1.0 - x[0] * x[0] - x[1] * x[1]) / 2.0
        });
        let cfg = PathConfig::for_domain(&dom, 1e-3, 21).unwrap();
        (p, u, cfg)
    }

    #[test]
    fn exact_field_is_consistent_on_nested_domains() {
        let (p, u, cfg) = linear_disk(1.0);
        let starts = vec![vec![0.0, 0.0], vec![0.25, 0.0], vec![0.0, -0.3125]];
        let inner = Domain::ball(vec![0.0, 0.0], 0.5).unwrap();
        let square = Domain::cube(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        for g in [p.domain().clone(), inner, square] {
            for pt in dynkin_consistency(&u, &p, &g, &starts, 4000, &cfg).unwrap() {
                assert!(pt.passed, "{g:?}: {pt:?}");
            }
        }
    }

    #[test]
    fn start_on_the_shell_exits_at_once() {
        let (p, u, cfg) = linear_disk(1.0);
        let inner = Domain::ball(vec![0.0, 0.0], 0.5).unwrap();
        let pt = &dynkin_consistency(&u, &p, &inner, &[vec![0.49, 0.0]], 50, &cfg).unwrap()[0];
        assert_eq!(pt.exited_g, 1.0);
        assert!(pt.discrepancy[0].abs() <= 1e-15 + pt.budget[0]);
        assert!(pt.discrepancy[0].abs() < 1e-12);
    }

    #[test]
    fn wrong_field_is_detected() {
        let (p, u, cfg) = linear_disk(1.3);
        let inner = Domain::ball(vec![0.0, 0.0], 0.5).unwrap();
        let pts = dynkin_consistency(&u, &p, &inner, &[vec![0.0, 0.0]], 4000, &cfg).unwrap();
        assert!(!pts[0].passed, "{pts:?}");
    }

    #[test]
    fn invalid_sub_domains_and_starts() {
        let (p, u, cfg) = linear_disk(1.0);
        let inner = Domain::ball(vec![0.0, 0.0], 0.5).unwrap();
        assert!(matches!(
            dynkin_consistency(&u, &p, &inner, &[vec![0.7, 0.0]], 10, &cfg),
            Err(OracleError::StartOutside(_))
        ));
        let poking_out = Domain::ball(vec![0.8, 0.0], 0.5).unwrap();
        assert_eq!(
            dynkin_consistency(&u, &p, &poking_out, &[vec![0.8, 0.0]], 10, &cfg),
            Err(OracleError::NotSubdomain)
        );
    }
}
