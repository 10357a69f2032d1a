//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use semilin::expr::{Expr, Scope};
use semilin::field::SolutionField;
use semilin::geometry::Domain;
use semilin::measure::{default_mollification, DiffuseMeasure, MeasureKind, Sign};
use semilin::nonlinearity::{truncate, Condition, Nonlinearity, NonlinearityKind};
use semilin::oracles::{
    default_test_functions, duality_residual, dynkin_consistency, fd_solve, radial_solve, FdOptions, RadialOptions,
};
use semilin::path::{occupation_integral, occupation_partials, simulate_killed_path, PathConfig, WalkState, Walker};
use semilin::solver::{
    martingale_residual, picard_solve, picard_solve_from, stampacchia_check, uniqueness_probe, Problem, SolveReport,
    SolverConfig,
};
use semilin::stats::parallel_estimate;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }

    fn failed(detail: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {detail}"))
    }
}

fn density(d: usize, s: &str, eps: f64) -> DiffuseMeasure {
    DiffuseMeasure::density(d, eps, Expr::parse(s, Scope::spatial(d)).unwrap())
}

/// Solves kept for later criteria.
#[derive(Default)]
struct Shared {
    linear_ball: Option<(Problem, SolutionField)>,
    semilinear_disk: Option<(Problem, SolutionField)>,
    reports: Vec<(&'static str, SolveReport)>,
}

fn linear_ball(shared: &mut Shared) -> Verdict {
    let h = 1e-3;
    let dom = Domain::unit_ball(3);
    let p = Problem::new(dom, vec![density(3, "1", default_mollification(h))], Nonlinearity::zero(1)).unwrap();
    let cfg = SolverConfig {
        grid_resolution: 17,
        paths_per_node: 10_000,
        step: h,
        seed: 101,
        ..SolverConfig::default()
    };
    let clock = Instant::now();
    let (u, report) = match picard_solve(&p, &cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let secs = clock.elapsed().as_secs_f64();
    let profile = match radial_solve(&p, &RadialOptions::default()) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let mut worst: f64 = 0.0;
    for n in u.interior_nodes() {
        let x = u.grid().position(n);
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() <= 0.8 + 1e-12 {
            let exact = profile.evaluate(&x)[0];
            worst = worst.max((u.node_values(n)[0] - exact).abs() / exact);
        }
    }
    let center = u.grid().nearest_node(&[0.0; 3]).unwrap();
    shared.reports.push(("linear ball", report));
    shared.linear_ball = Some((p, u.clone()));
    Verdict::new(
        worst <= 0.05 && secs <= 300.0,
        format!(
            "sup relative error {worst:.4} (limit 0.05) on |x| <= 0.8, u(0) = {:.4}, runtime {secs:.0} s (limit 300 s)",
            u.node_values(center)[0]
        ),
    )
}

fn exit_time() -> Verdict {
    let dom = Domain::unit_ball(2);
    let cfg = PathConfig::for_domain(&dom, 1e-3, 202).unwrap();
    let walker = Walker::new(&dom, &cfg);
    let lifetime = |x: [f64; 2]| {
        parallel_estimate(100_000, |p| {
            let mut s = WalkState::new(2);
            walker.lifetime(&x, p, &mut s).0
        })
    };
    let centre = lifetime([0.0, 0.0]);
    let z = (centre.mean - 0.5) / centre.se;
    let mut worst_excess = f64::NEG_INFINITY;
    for x in [[0.0, 0.0], [0.3, 0.0], [0.0, -0.5], [0.4, 0.4], [-0.7, 0.1]] {
        let e = lifetime(x);
        let bound = dom.exit_time_bound(&x).unwrap();
        worst_excess = worst_excess.max((e.mean - bound) / e.se);
    }
    Verdict::new(
        z.abs() <= 3.0 && worst_excess <= 3.0,
        format!(
            "E_0 zeta = {:.5} +/- {:.5} (z = {z:.2}); largest (mean - bound)/SE over 5 points = {worst_excess:.2} (limit 3)",
            centre.mean, centre.se
        ),
    )
}

fn revuz() -> Verdict {
    let h = 1e-3;
    let mut lines = Vec::new();
    let mut pass = true;
    for d in [2, 3] {
        let dom = Domain::unit_ball(d);
        let cfg = PathConfig::for_domain(&dom, h, 303 + d as u64).unwrap();
        let eps = default_mollification(h);
        let sphere = DiffuseMeasure::zero(d, eps).with_term(
            Sign::Plus,
            MeasureKind::SphereSurface {
                center: vec![0.0; d],
                radius: 0.5,
                mass: 1.0,
            },
        );
        for (name, mu) in [("density", density(d, "1", eps)), ("sphere", sphere)] {
            match mu.revuz_check(&dom, |x| 1.0 + 0.5 * x[0], |x| 2.0 - x[1] * x[1], 0.2, 100_000, &cfg) {
                Ok(r) => {
                    pass &= r.passed;
                    lines.push(format!(
                        "d={d} {name}: |{:.5} - {:.5}| vs 3*{:.5}",
                        r.lhs.mean, r.rhs.mean, r.pooled_se
                    ));
                }
                Err(e) => return Verdict::failed(e),
            }
        }
    }
    Verdict::new(pass, lines.join("; "))
}

fn semilinear_scalar(shared: &mut Shared) -> Verdict {
    let h = 2.5e-3;
    let dom = Domain::unit_ball(2);
    let p = Problem::new(
        dom,
        vec![density(2, "1", default_mollification(h))],
        Nonlinearity::linear_decay(1, 1.0).unwrap(),
    )
    .unwrap();
    let cfg = SolverConfig {
        grid_resolution: 17,
        paths_per_node: 6000,
        step: h,
        seed: 404,
        ..SolverConfig::default()
    };
    let (u, report) = match picard_solve(&p, &cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    // 129 nodes per axis contain the 17-node grid
    let fd = match fd_solve(&p, &FdOptions { grid_resolution: 129, ..FdOptions::default() }) {
        Ok((f, _)) => f,
        Err(e) => return Verdict::failed(e),
    };
    let mut worst: f64 = 0.0;
    for n in u.interior_nodes() {
        let x = u.grid().position(n);
        worst = worst.max((u.node_values(n)[0] - fd.evaluate(&x)[0]).abs());
    }
    let rel = worst / fd.sup_norm();
    let sweeps = report.sweeps;
    shared.reports.push(("semilinear disk", report));
    shared.semilinear_disk = Some((p, u));
    Verdict::new(
        rel <= 0.05,
        format!("sup |u - u_fd| / sup |u_fd| = {rel:.4} (limit 0.05) after {sweeps} sweeps"),
    )
}

fn rotation_system(shared: &mut Shared) -> Verdict {
    let h = 4e-3;
    let dom = Domain::unit_ball(2);
    let eps = default_mollification(h);
    let p = Problem::new(
        dom.clone(),
        vec![density(2, "1", eps), DiffuseMeasure::zero(2, eps)],
        Nonlinearity::rotation(),
    )
    .unwrap();
    let cfg = SolverConfig {
        grid_resolution: 17,
        paths_per_node: 2000,
        step: h,
        seed: 505,
        max_sweeps: 30,
        ..SolverConfig::default()
    };
    let (u, report) = match picard_solve(&p, &cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let sweeps = report.sweeps;
    shared.reports.push(("rotation system", report));
    let path_cfg = PathConfig::for_domain(&dom, h, 5050).unwrap();
    let mart = match martingale_residual(&u, &p, &[0.25, 0.0], 20_000, &[0.05, 0.1, 0.2, 0.4], &path_cfg) {
        Ok(m) => m,
        Err(e) => return Verdict::failed(e),
    };
    let mart_ok = mart.iter().all(|m| m.passed);
    let worst_mart = mart
        .iter()
        .flat_map(|m| m.mean.iter().zip(&m.budget).map(|(a, b)| a.abs() / b))
        .fold(0.0, f64::max);
    let dual = match duality_residual(&u, &p, &default_test_functions(&dom)) {
        Ok(d) => d,
        Err(e) => return Verdict::failed(e),
    };
    let dual_ok = dual.iter().all(|r| r.passed);
    let worst_dual = dual.iter().map(|r| r.residual.abs() / r.budget).fold(0.0, f64::max);
    let f = p.nonlinearity();
    let a4pp = f.check_condition(Condition::A4DoublePrime, &dom, 10_000, 2.0, 55);
    let a4 = f.check_condition(Condition::A4, &dom, 10_000, 2.0, 55);
    Verdict::new(
        sweeps <= 30 && mart_ok && dual_ok && !a4pp.holds_on_sample && a4.holds_on_sample,
        format!(
            "{sweeps} sweeps; martingale worst |mean|/budget {worst_mart:.2}; duality worst |residual|/budget {worst_dual:.2} over {} tests; A4'' counterexample found: {}; A4 holds on sample: {}",
            dual.len(),
            !a4pp.holds_on_sample,
            a4.holds_on_sample
        ),
    )
}

fn stampacchia(shared: &mut Shared) -> Verdict {
    let Some((p, u)) = shared.semilinear_disk.as_ref() else {
        return Verdict::failed("semilinear disk solve unavailable");
    };
    let linear = match stampacchia_check(u, p) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let a5 = linear.a5.expect("linear decay declares A5");

    let h = 4e-3;
    let eps = default_mollification(h);
    let cube = Expr::parse("-y^3", Scope::componentwise(2)).unwrap();
    let f = Nonlinearity::new(
        2,
        NonlinearityKind::Componentwise(vec![cube.clone(), cube]),
        vec![Condition::A4, Condition::A4Prime, Condition::A4DoublePrime],
    )
    .unwrap();
    let pc = Problem::new(Domain::unit_ball(2), vec![density(2, "1", eps), density(2, "2", eps)], f).unwrap();
    let cfg = SolverConfig {
        grid_resolution: 17,
        paths_per_node: 2000,
        step: h,
        seed: 606,
        ..SolverConfig::default()
    };
    let (uc, report) = match picard_solve(&pc, &cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    shared.reports.push(("componentwise cubic", report));
    let cubic = match stampacchia_check(&uc, &pc) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let b = cubic.a4doubleprime.expect("cubic declares A4''");
    Verdict::new(
        a5.ok && b.ok,
        format!(
            "linear decay: {:.4} <= 1.05*{:.4}; componentwise cubic: {:.4} <= 1.05*{:.4}",
            a5.lhs, a5.rhs, b.lhs, b.rhs
        ),
    )
}

fn barrier_domination(shared: &Shared) -> Verdict {
    let mut pass = !shared.reports.is_empty();
    let mut parts = Vec::new();
    for (name, r) in &shared.reports {
        let frac = r.barrier_violations as f64 / r.interior_nodes.max(1) as f64;
        pass &= frac <= 0.01 && r.barrier_violations_after_resample == 0;
        parts.push(format!(
            "{name}: {}/{} before, {} after resample",
            r.barrier_violations, r.interior_nodes, r.barrier_violations_after_resample
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn uniqueness(shared: &mut Shared) -> Verdict {
    let h = 4e-3;
    let dom = Domain::unit_ball(2);
    let eps = default_mollification(h);
    let p = Problem::new(
        dom.clone(),
        vec![density(2, "1", eps)],
        Nonlinearity::linear_decay(1, 1.0).unwrap(),
    )
    .unwrap();
    let cfg = SolverConfig {
        grid_resolution: 9,
        paths_per_node: 2000,
        step: h,
        seed: 808,
        ..SolverConfig::default()
    };
    let grid = cfg.grid(&dom);
    let guesses = [
        SolutionField::zeros(&dom, grid.clone(), 1),
        SolutionField::from_fn(&dom, grid.clone(), 1, |_, o| o[0] = 1.0),
        SolutionField::from_fn(&dom, grid.clone(), 1, |x, o| o[0] = -(1.0 - x[0] * x[0] - x[1] * x[1])),
    ];
    let probe = match uniqueness_probe(&p, &cfg, &guesses) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    for r in &probe.reports {
        shared.reports.push(("uniqueness probe", r.clone()));
    }
    let worst_ratio = probe.pairs.iter().map(|q| q.2 / q.3).fold(0.0, f64::max);

    // Zero data seeded with the fundamental solution of −½Δ, floored at half
    // the grid spacing
    let zero = Problem::new(dom.clone(), vec![DiffuseMeasure::zero(2, eps)], Nonlinearity::zero(1)).unwrap();
    let floor = 0.5 * grid.spacing()[0];
    let seed_field = SolutionField::from_fn(&dom, grid, 1, |x, o| {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt().max(floor);
        o[0] = -r.ln() / std::f64::consts::PI
    });
    let (u0, r0) = match picard_solve_from(&zero, &cfg, &seed_field) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let interp = u0
        .interior_nodes()
        .iter()
        .map(|&n| seed_field.interpolation_error(&u0.grid().position(n)))
        .fold(0.0, f64::max);
    let residual = u0.sup_norm();
    Verdict::new(
        probe.passed && r0.sweeps <= 1 && residual <= interp,
        format!(
            "3 guesses: worst distance/(3 pooled SE) = {worst_ratio:.3}; fundamental-solution seed: sup|u| = {residual:.2e} after {} sweep (seed sup {:.3})",
            r0.sweeps,
            seed_field.sup_norm()
        ),
    )
}

fn dynkin(shared: &Shared) -> Verdict {
    let Some((p, u)) = shared.linear_ball.as_ref() else {
        return Verdict::failed("linear ball solve unavailable");
    };
    let g = Domain::ball(vec![0.0; 3], 0.5).unwrap();
    let starts = vec![
        vec![0.0, 0.0, 0.0],
        vec![0.25, 0.0, 0.0],
        vec![0.0, -0.125, 0.25],
        vec![-0.125, 0.125, 0.125],
        vec![0.0, 0.375, 0.0],
    ];
    let cfg = PathConfig::for_domain(p.domain(), 1e-3, 909).unwrap();
    let pts = match dynkin_consistency(u, p, &g, &starts, 10_000, &cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::failed(e),
    };
    let parts: Vec<String> = pts
        .iter()
        .map(|q| format!("{:+.5} (SE {:.5}, budget {:.5})", q.discrepancy[0], q.se[0], q.budget[0]))
        .collect();
    Verdict::new(pts.iter().all(|q| q.passed), parts.join("; "))
}

fn unit_exact() -> Verdict {
    let eps = f64::EPSILON;
    let mut runner = TestRunner::new(Config {
        cases: 2000,
        failure_persistence: None,
        ..Config::default()
    });
    let vec3 = || prop::collection::vec(-1e3f64..1e3, 3);
    let mut results: Vec<(&str, Result<(), String>)> = Vec::new();

    results.push((
        "non-expansive",
        runner.run(&(vec3(), vec3(), 1e-3f64..1e3), |(a, b, r)| {
            let (ta, tb) = (truncate(&a, r), truncate(&b, r));
            let d_t = norm(&sub(&ta, &tb));
            let d = norm(&sub(&a, &b));
            prop_assert!(d_t <= d + 8.0 * eps * (norm(&a) + norm(&b)));
            Ok(())
        })
        .map_err(|e| e.to_string()),
    ));
    results.push((
        "bounded by r",
        runner.run(&(vec3(), 1e-3f64..1e3), |(y, r)| {
            prop_assert!(norm(&truncate(&y, r)) <= r * (1.0 + 4.0 * eps));
            Ok(())
        })
        .map_err(|e| e.to_string()),
    ));
    results.push((
        "angle preserving",
        runner.run(&(vec3(), vec3(), 1e-3f64..1e3), |(f, y, r)| {
            let t = truncate(&f, r);
            let (a, b) = (dot(&f, &y), dot(&t, &y));
            // T_r f is a positive multiple of f
            let scale = norm(&f) * norm(&y);
            prop_assert!(a * b >= 0.0 || a.abs() <= 8.0 * eps * scale);
            prop_assert!((dot(&t, &f) - norm(&t) * norm(&f)).abs() <= 8.0 * eps * norm(&t) * norm(&f));
            Ok(())
        })
        .map_err(|e| e.to_string()),
    ));

    let dom = Domain::unit_ball(2);
    let cfg = PathConfig::for_domain(&dom, 1e-2, 1010).unwrap();
    results.push((
        "occupation additivity",
        runner.run(&(0u64..100_000, 0usize..40), |(index, split)| {
            let path = simulate_killed_path(&dom, &[0.1, -0.2], &cfg, index).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let g1 = |x: &[f64]| 1.0 + x[0];
            let g2 = |x: &[f64]| x[1] * x[1];
            let both = occupation_integral(&path, |x| g1(x) + g2(x));
            let sum = occupation_integral(&path, g1) + occupation_integral(&path, g2);
            prop_assert!((both - sum).abs() <= 64.0 * eps * (1.0 + both.abs()));
            // A_total = A_s + (A_total − A_s): the partial sums telescope
            let partials = occupation_partials(&path, |x| g1(x) + g2(x));
            let s = split.min(partials.len() - 1);
            let tail = *partials.last().unwrap() - partials[s];
            prop_assert!((partials[s] + tail - both).abs() <= 64.0 * eps * (1.0 + both.abs()));
            prop_assert!(partials.windows(2).all(|w| w[1] >= w[0] - 64.0 * eps));
            Ok(())
        })
        .map_err(|e| e.to_string()),
    ));
    let m1 = density(2, "1 + x1^2", 0.2);
    let m2 = DiffuseMeasure::zero(2, 0.2).with_term(
        Sign::Plus,
        MeasureKind::SphereSurface {
            center: vec![0.0, 0.0],
            radius: 0.5,
            mass: 2.0,
        },
    );
    results.push((
        "accumulate linearity",
        runner.run(&(0u64..100_000, -5.0f64..5.0, -5.0f64..5.0), |(index, a, b)| {
            let path = simulate_killed_path(&dom, &[0.3, 0.0], &cfg, index).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let combo = m1.scaled(a).plus(&m2.scaled(b)).unwrap();
            let lhs = combo.accumulate(&path).total;
            let (x, y) = (m1.accumulate(&path).total, m2.accumulate(&path).total);
            let rhs = a * x + b * y;
            prop_assert!((lhs - rhs).abs() <= 64.0 * eps * (1.0 + (a * x).abs() + (b * y).abs()));
            Ok(())
        })
        .map_err(|e| e.to_string()),
    ));
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    if failures.is_empty() {
        Verdict::new(true, format!("{} properties x 2000 cases", results.len()))
    } else {
        Verdict::new(false, failures.join("; "))
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() {
    // `cargo test` passes harness flags such as --quiet; they are ignored
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        println!("criterion {n:>2} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    let v = linear_ball(&mut shared);
    report(1, "linear ball benchmark", v);
    report(2, "exit-time identity", exit_time());
    report(3, "Revuz duality", revuz());
    let v = semilinear_scalar(&mut shared);
    report(4, "semilinear scalar vs finite differences", v);
    let v = rotation_system(&mut shared);
    report(5, "rotation system", v);
    let v = stampacchia(&mut shared);
    report(6, "Stampacchia bounds", v);
    let v = uniqueness(&mut shared);
    let v9 = dynkin(&shared);
    report(7, "barrier domination", barrier_domination(&shared));
    report(8, "uniqueness probe", v);
    report(9, "Dynkin localization", v9);
    report(10, "unit-exact properties", unit_exact());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
