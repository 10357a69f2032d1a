//! Finite-difference oracle for planar problems.
//!
//! Five-point Laplacian on the bounding-box grid. Where an arm of the stencil
//! leaves Ω the boundary crossing is located by bisection on the signed
//! distance and the arm is shortened to it (Shortley–Weller), so curved
//! boundaries keep second-order accuracy. Linear solves use SOR; the
//! nonlinearity is handled by damped Picard sweeps.

use crate::field::{Grid, SolutionField};
use crate::solver::Problem;

use super::OracleError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub grid_resolution: usize,
    pub damping: f64,
    /// Relative sup-norm change that ends the Picard loop.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Relative sup-norm SOR update that ends a linear solve.
    pub sor_tol: f64,
    pub max_sor_iterations: usize,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            grid_resolution: 65,
            damping: 1.0,
            tol: 1e-10,
            max_sweeps: 500,
            sor_tol: 1e-13,
            max_sor_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub sweeps: usize,
    pub sor_iterations: usize,
    pub last_change: f64,
}

/// Row of the discrete operator at one interior node.
struct Stencil {
    node: usize,
    diag: f64,
    /// (interior neighbour, coefficient) pairs.
    neighbours: Vec<(usize, f64)>,
}

pub fn fd_solve(problem: &Problem, opts: &FdOptions) -> Result<(SolutionField, FdReport), OracleError> {
    let domain = problem.domain();
    if domain.dimension() != 2 {
        return Err(OracleError::UnsupportedDomain(format!(
            "finite differences need d = 2, got {}",
            domain.dimension()
        )));
    }
    if opts.grid_resolution < 3 {
        return Err(OracleError::InvalidParameter("grid resolution must be at least 3".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(OracleError::InvalidParameter(format!("damping {}", opts.damping)));
    }
    let grid = Grid::for_domain(domain, opts.grid_resolution);
    let mut field = SolutionField::zeros(domain, grid.clone(), problem.n_components());
    let interior = field.interior_nodes();
    let rows = assemble(problem, &grid, &interior);
    let n = problem.n_components();
    let positions: Vec<Vec<f64>> = interior.iter().map(|&i| grid.position(i)).collect();
    let density: Vec<f64> = positions
        .iter()
        .flat_map(|x| problem.measures().iter().map(|m| m.density_at(x)).collect::<Vec<_>>())
        .collect();

    // node-major unknowns, one slot per grid node so neighbours index directly
    let mut u = vec![0.0; grid.len() * n];
    let mut q = vec![0.0; interior.len() * n];
    let mut fv = vec![0.0; n];
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / (opts.grid_resolution - 1) as f64).sin());
    let f = problem.nonlinearity();
    let mut report = FdReport {
        sweeps: 0,
        sor_iterations: 0,
        last_change: 0.0,
    };
    loop {
        report.sweeps += 1;
        for (r, x) in positions.iter().enumerate() {
            let node = rows[r].node;
            if f.is_zero() {
                fv.iter_mut().for_each(|v| *v = 0.0);
            } else if !f.evaluate_into(x, &u[node * n..(node + 1) * n], &mut fv) {
                return Err(OracleError::NonFinite);
            }
            for k in 0..n {
                q[r * n + k] = fv[k] + density[r * n + k];
            }
        }
        let mut next = u.clone();
        for k in 0..n {
            report.sor_iterations += sor(&rows, &q, n, k, &mut next, omega, opts)?;
        }
        let mut change: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for (a, b) in u.iter_mut().zip(&next) {
            let v = (1.0 - opts.damping) * *a + opts.damping * b;
            change = change.max((v - *a).abs());
            sup = sup.max(v.abs());
            *a = v;
        }
        report.last_change = change;
        if !change.is_finite() {
            return Err(OracleError::NonFinite);
        }
        if f.is_zero() || change <= opts.tol * (1.0 + sup) {
            break;
        }
        if report.sweeps >= opts.max_sweeps {
            return Err(OracleError::NonConvergence {
                iterations: report.sweeps,
                change,
            });
        }
    }
    let zeros = vec![0.0; n];
    for &node in &interior {
        field.set_node(node, &u[node * n..(node + 1) * n], &zeros);
    }
    Ok((field, report))
}

/// Solves at `grid_resolution` and at 2·(resolution − 1) + 1 nodes, returning
/// the fine field and the sup difference at the coarse nodes as an error
/// estimate.
pub fn fd_solve_refined(problem: &Problem, opts: &FdOptions) -> Result<(SolutionField, f64), OracleError> {
    let (coarse, _) = fd_solve(problem, opts)?;
    let fine_opts = FdOptions {
        grid_resolution: 2 * (opts.grid_resolution - 1) + 1,
        ..*opts
    };
    let (fine, _) = fd_solve(problem, &fine_opts)?;
    let mut err: f64 = 0.0;
    for node in coarse.interior_nodes() {
        let x = coarse.grid().position(node);
        let v = fine.evaluate(&x);
        for (a, b) in coarse.node_values(node).iter().zip(&v) {
            err = err.max((a - b).abs());
        }
    }
    Ok((fine, err))
}

fn assemble(problem: &Problem, grid: &Grid, interior: &[usize]) -> Vec<Stencil> {
    let domain = problem.domain();
    let spacing = grid.spacing().to_vec();
    let nodes = grid.nodes_per_axis().to_vec();
    let is_inside = |node: usize| domain.sdf(&grid.position(node)) > 0.0;
    interior
        .iter()
        .map(|&node| {
            let x = grid.position(node);
            let idx = grid.multi_index(node);
            let mut diag = 0.0;
            let mut neighbours = Vec::with_capacity(4);
            for axis in 0..2 {
                // arm lengths and neighbour indices on each side
                let mut arms = [(spacing[axis], None); 2];
                for (side, dir) in [(0usize, -1.0f64), (1, 1.0)] {
                    let j = idx[axis] as isize + dir as isize;
                    let inside = j >= 0 && (j as usize) < nodes[axis] && {
                        let mut m = idx.clone();
                        m[axis] = j as usize;
                        let nb = grid.flat_index(&m);
                        let ok = is_inside(nb);
                        if ok {
                            arms[side].1 = Some(nb);
                        }
                        ok
                    };
                    if !inside {
                        arms[side].0 = crossing(domain, &x, axis, dir * spacing[axis]);
                    }
                }
                let (hm, hp) = (arms[0].0, arms[1].0);
                // −½ u″ ≈ −[(u⁺ − u)/h⁺ − (u − u⁻)/h⁻] / (h⁻ + h⁺)
                let cm = 1.0 / (hm * (hm + hp));
                let cp = 1.0 / (hp * (hm + hp));
                diag += cm + cp;
                if let Some(nb) = arms[0].1 {
                    neighbours.push((nb, cm));
                }
                if let Some(nb) = arms[1].1 {
                    neighbours.push((nb, cp));
                }
            }
            Stencil { node, diag, neighbours }
        })
        .collect()
}

/// Distance from x (inside) along ±axis to the zero of the signed distance,
/// within one arm of length |step|.
fn crossing(domain: &crate::geometry::Domain, x: &[f64], axis: usize, step: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut y = x.to_vec();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        y[axis] = x[axis] + mid * step;
        if domain.sdf(&y) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // keep the arm strictly positive for nodes sitting on the boundary
    (0.5 * (lo + hi) * step.abs()).max(1e-12 * step.abs())
}

fn sor(rows: &[Stencil], q: &[f64], n: usize, k: usize, u: &mut [f64], omega: f64, opts: &FdOptions) -> Result<usize, OracleError> {
    let mut update = f64::INFINITY;
    for it in 1..=opts.max_sor_iterations {
        let mut max_update: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for (r, row) in rows.iter().enumerate() {
            let mut s = q[r * n + k];
            for &(nb, c) in &row.neighbours {
                s += c * u[nb * n + k];
            }
            let gs = s / row.diag;
            let old = u[row.node * n + k];
            let new = old + omega * (gs - old);
            u[row.node * n + k] = new;
            max_update = max_update.max((new - old).abs());
            sup = sup.max(new.abs());
        }
        update = max_update;
        if !update.is_finite() {
            break;
        }
        if update <= opts.sor_tol * sup.max(1e-300) || update == 0.0 {
            return Ok(it);
        }
    }
    Err(OracleError::LinearSolveFailure {
        iterations: opts.max_sor_iterations,
        update,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, Scope};
    use crate::geometry::Domain;
    use crate::measure::DiffuseMeasure;
    use crate::nonlinearity::Nonlinearity;
    use crate::oracles::{radial_solve, RadialOptions};

    fn density(s: &str) -> DiffuseMeasure {
        DiffuseMeasure::density(2, 0.05, Expr::parse(s, Scope::spatial(2)).unwrap())
    }

    fn manufactured_error(res: usize) -> f64 {
        let square = Domain::cube(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let p = Problem::new(square, vec![density("pi^2*sin(pi*x1)*sin(pi*x2)")], Nonlinearity::zero(1)).unwrap();
        let opts = FdOptions {
            grid_resolution: res,
            ..FdOptions::default()
        };
        let (u, report) = fd_solve(&p, &opts).unwrap();
        assert_eq!(report.sweeps, 1);
        let pi = std::f64::consts::PI;
        u.interior_nodes()
            .into_iter()
            .map(|n| {
                let x = u.grid().position(n);
                (u.node_values(n)[0] - (pi * x[0]).sin() * (pi * x[1]).sin()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let e: Vec<f64> = [9, 17, 33, 65].iter().map(|&r| manufactured_error(r)).collect();
        assert!(e[3] < 1e-3);
        for w in e.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "errors {e:?}");
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let p = Problem::new(Domain::unit_ball(2), vec![DiffuseMeasure::zero(2, 0.1)], Nonlinearity::zero(1)).unwrap();
        let (u, _) = fd_solve(&p, &FdOptions { grid_resolution: 17, ..FdOptions::default() }).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_agrees_with_radial_oracle() {
        for f in [Nonlinearity::zero(1), Nonlinearity::linear_decay(1, 1.0).unwrap()] {
            let p = Problem::new(Domain::unit_ball(2), vec![density("1")], f).unwrap();
            let (u, fd_err) = fd_solve_refined(&p, &FdOptions { grid_resolution: 33, ..FdOptions::default() }).unwrap();
            let prof = radial_solve(&p, &RadialOptions::default()).unwrap();
            let mut worst: f64 = 0.0;
            for n in u.interior_nodes() {
                let x = u.grid().position(n);
                worst = worst.max((u.node_values(n)[0] - prof.evaluate(&x)[0]).abs());
            }
            assert!(worst <= fd_err + prof.discretization_error + 1e-9, "{worst} vs {fd_err}");
            assert!(worst < 1e-3);
        }
    }

    #[test]
    fn rejects_three_dimensions() {
        let p = Problem::new(Domain::unit_ball(3), vec![density3()], Nonlinearity::zero(1)).unwrap();
        assert!(matches!(fd_solve(&p, &FdOptions::default()), Err(OracleError::UnsupportedDomain(_))));
    }

    fn density3() -> DiffuseMeasure {
        DiffuseMeasure::density(3, 0.05, Expr::parse("1", Scope::spatial(3)).unwrap())
    }
}
