//! Weak-form residual ½∫∇u·∇v − ∫f(u)v − ⟨μ, v⟩ against smooth bumps.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::field::SolutionField;
use crate::geometry::Domain;
use crate::rng::{derive_seed, StreamRng};
use crate::solver::Problem;

use super::OracleError;

/// Number of noisy copies of the field used to propagate node SEs.
const SE_REPLICAS: usize = 32;
const SE_TAG: u64 = 0xd0a1_17e5;

/// Product of 1-D bumps exp(1 − 1/(1 − s²)), s = (x_i − c_i)/w_i, supported
/// on the box |x_i − c_i| < w_i. Its maximum, at the center, is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpFunction {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
}

fn bump_1d(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let v = (1.0 - 1.0 / q).exp();
    // d/ds exp(1 − 1/q) = exp(·)·(−2s/q²)
    (v, -2.0 * s / (q * q) * v)
}

impl BumpFunction {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>) -> Self {
        Self { center, half_widths }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .zip(&self.half_widths)
            .map(|((x, c), w)| bump_1d((x - c) / w).0)
            .product()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let parts: Vec<(f64, f64)> = (0..d).map(|i| bump_1d((x[i] - self.center[i]) / self.half_widths[i])).collect();
        for i in 0..d {
            let mut g = parts[i].1 / self.half_widths[i];
            for (j, p) in parts.iter().enumerate() {
                if j != i {
                    g *= p.0;
                }
            }
            out[i] = g;
        }
    }

    /// Support box [c − w, c + w].
    pub fn support(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.center.iter().zip(&self.half_widths).map(|(c, w)| c - w).collect();
        let hi = self.center.iter().zip(&self.half_widths).map(|(c, w)| c + w).collect();
        (lo, hi)
    }

    /// True when a lattice of the closed support box lies in Ω.
    pub fn fits_in(&self, domain: &Domain) -> bool {
        let (lo, hi) = self.support();
        let d = lo.len();
        let m = 9usize;
        let mut x = vec![0.0; d];
        (0..m.pow(d as u32)).all(|mut code| {
            for i in 0..d {
                let t = (code % m) as f64 / (m - 1) as f64;
                code /= m;
                x[i] = lo[i] + t * (hi[i] - lo[i]);
            }
            domain.sdf(&x) > 0.0
        })
    }
}

/// Bumps around the middle of the bounding box: one at the middle, one
/// shifted by a quarter of the box along each axis in each direction and
/// four on the diagonals of the first two axes, keeping those whose support
/// fits in Ω. Widths shrink until at least five fit.
pub fn default_test_functions(domain: &Domain) -> Vec<BumpFunction> {
    let (lo, hi) = domain.bounding_box();
    let d = domain.dimension();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let extent: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
    let min_extent = extent.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for width_frac in [0.15, 0.1, 0.06] {
        let mut candidates = vec![mid.clone()];
        for axis in 0..d {
            for s in [-1.0, 1.0] {
                let mut c = mid.clone();
                c[axis] += s * 0.25 * extent[axis];
                candidates.push(c);
            }
        }
        for s in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            let mut c = mid.clone();
            c[0] += s[0] * 0.25 * extent[0];
            c[1] += s[1] * 0.25 * extent[1];
            candidates.push(c);
        }
        out = candidates
            .into_iter()
            .map(|c| BumpFunction::new(c, vec![width_frac * min_extent; d]))
            .filter(|b| b.fits_in(domain))
            .collect();
        if out.len() >= 5 {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityResidual {
    pub component: usize,
    pub test: usize,
    /// ½∫∇uᵏ·∇v.
    pub energy: f64,
    /// ∫fᵏ(u)v.
    pub reaction: f64,
    /// ⟨μᵏ, v⟩ with surface terms spread over their ε-shells, as the
    /// solver sees them.
    pub data: f64,
    /// ⟨μᵏ, v⟩ with surfaces integrated on the surfaces themselves; the gap
    /// to `data` is the mollification bias and is not part of the residual.
    pub exact_data: f64,
    /// energy − reaction − data.
    pub residual: f64,
    /// 3·(SE propagated from node SEs) + quadrature error estimates.
    pub budget: f64,
    pub passed: bool,
}

/// Residual of the weak form for every component and test function.
///
/// Gradients of u are central differences of the interpolant at the grid
/// spacing. Quadrature runs on sub-cells aligned with the grid cells that
/// cover the support of v, skipping points within one cell of ∂Ω; what is
/// skipped goes into the budget.
pub fn duality_residual(
    u: &SolutionField,
    problem: &Problem,
    tests: &[BumpFunction],
) -> Result<Vec<DualityResidual>, OracleError> {
    let domain = problem.domain();
    if u.components() != problem.n_components() {
        return Err(OracleError::InvalidParameter("field and problem have different component counts".into()));
    }
    for (i, t) in tests.iter().enumerate() {
        if t.center.len() != domain.dimension() || !t.fits_in(domain) {
            return Err(OracleError::SupportEscapes(i));
        }
    }
    let n = problem.n_components();
    let pair_cells = if domain.dimension() == 2 { 256 } else { 48 };
    let per_test: Vec<Result<Vec<DualityResidual>, OracleError>> = tests
        .par_iter()
        .enumerate()
        .map(|(ti, v)| {
            let fine = weak_terms(u, problem, v, 8);
            let coarse = weak_terms(u, problem, v, 4);
            let spread = se_spread(u, problem, v, ti as u64);
            let mut out = Vec::with_capacity(n);
            for k in 0..n {
                let (exact_data, _) = problem.measures()[k].pair_with(domain, pair_cells, |x| v.value(x))?;
                let energy = fine.energy[k];
                let reaction = fine.reaction[k];
                let data = fine.data[k];
                let residual = energy - reaction - data;
                let quad = (residual - (coarse.energy[k] - coarse.reaction[k] - coarse.data[k])).abs();
                let roundoff = 1e-10 * (energy.abs() + reaction.abs() + data.abs());
                let budget = 3.0 * spread[k] + quad + fine.excluded[k] + roundoff;
                out.push(DualityResidual {
                    component: k,
                    test: ti,
                    energy,
                    reaction,
                    data,
                    exact_data,
                    residual,
                    budget,
                    passed: residual.abs() <= budget,
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(tests.len() * n);
    for r in per_test {
        all.extend(r?);
    }
    Ok(all)
}

struct WeakTerms {
    energy: Vec<f64>,
    reaction: Vec<f64>,
    data: Vec<f64>,
    excluded: Vec<f64>,
}

/// Midpoint rule with `sub` points per grid cell along each axis.
fn weak_terms(u: &SolutionField, problem: &Problem, v: &BumpFunction, sub: usize) -> WeakTerms {
    let grid = u.grid();
    let d = grid.dimension();
    let n = u.components();
    let h = grid.spacing().to_vec();
    let hmax = h.iter().copied().fold(0.0, f64::max);
    let (lo, hi) = v.support();
    let first: Vec<f64> = (0..d).map(|i| grid.lower()[i] + ((lo[i] - grid.lower()[i]) / h[i]).floor() * h[i]).collect();
    let counts: Vec<usize> = (0..d).map(|i| (((hi[i] - first[i]) / h[i]).ceil() as usize).max(1) * sub).collect();
    let dx: Vec<f64> = h.iter().map(|hi| hi / sub as f64).collect();
    let weight: f64 = dx.iter().product();
    let total: usize = counts.iter().product();

    let mut out = WeakTerms {
        energy: vec![0.0; n],
        reaction: vec![0.0; n],
        data: vec![0.0; n],
        excluded: vec![0.0; n],
    };
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut gv = vec![0.0; d];
    let mut up = vec![0.0; n];
    let mut um = vec![0.0; n];
    let mut uval = vec![0.0; n];
    let mut fv = vec![0.0; n];
    for code in 0..total {
        let mut c = code;
        for i in 0..d {
            x[i] = first[i] + ((c % counts[i]) as f64 + 0.5) * dx[i];
            c /= counts[i];
        }
        let vx = v.value(&x);
        if vx == 0.0 {
            continue;
        }
        v.gradient_into(&x, &mut gv);
        u.evaluate_into(&x, &mut uval);
        let mut grad_dot = vec![0.0; n];
        for a in 0..d {
            y.copy_from_slice(&x);
            y[a] = x[a] + h[a];
            u.interpolate_into(&y, &mut up);
            y[a] = x[a] - h[a];
            u.interpolate_into(&y, &mut um);
            for k in 0..n {
                grad_dot[k] += (up[k] - um[k]) / (2.0 * h[a]) * gv[a];
            }
        }
        problem.nonlinearity().evaluate_into(&x, &uval, &mut fv);
        let near_boundary = problem.domain().sdf(&x) < hmax;
        for k in 0..n {
            let e = 0.5 * grad_dot[k] * weight;
            let r = fv[k] * vx * weight;
            let m = problem.measures()[k].density_at(&x) * vx * weight;
            if near_boundary {
                out.excluded[k] += e.abs() + r.abs() + m.abs();
            } else {
                out.energy[k] += e;
                out.reaction[k] += r;
                out.data[k] += m;
            }
        }
    }
    out
}

/// Standard deviation of energy − reaction over copies of u whose node
/// values are perturbed by their own standard errors.
fn se_spread(u: &SolutionField, problem: &Problem, v: &BumpFunction, test: u64) -> Vec<f64> {
    let n = u.components();
    if u.standard_errors().iter().all(|&s| s == 0.0) {
        return vec![0.0; n];
    }
    let mut rng = StreamRng::seed_from_u64(derive_seed(SE_TAG, test));
    let nodes = u.interior_nodes();
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(SE_REPLICAS); n];
    for _ in 0..SE_REPLICAS {
        let mut copy = u.clone();
        for &node in &nodes {
            let vals: Vec<f64> = u
                .node_values(node)
                .iter()
                .zip(u.node_se(node))
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect();
            copy.set_node(node, &vals, u.node_se(node));
        }
        let t = weak_terms(&copy, problem, v, 4);
        for k in 0..n {
            samples[k].push(t.energy[k] - t.reaction[k]);
        }
    }
    samples
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, Scope};
    use crate::field::Grid;
    use crate::measure::{DiffuseMeasure, MeasureKind, Sign};
    use crate::nonlinearity::Nonlinearity;

    fn unit_density(d: usize) -> DiffuseMeasure {
        DiffuseMeasure::density(d, 0.05, Expr::parse("1", Scope::spatial(d)).unwrap())
    }

    #[test]
    fn bump_gradient_matches_differences() {
        let b = BumpFunction::new(vec![0.1, -0.2], vec![0.3, 0.4]);
        let x = [0.2, -0.1];
        let mut g = [0.0; 2];
        b.gradient_into(&x, &mut g);
        let e = 1e-6;
        let gx = (b.value(&[x[0] + e, x[1]]) - b.value(&[x[0] - e, x[1]])) / (2.0 * e);
        let gy = (b.value(&[x[0], x[1] + e]) - b.value(&[x[0], x[1] - e])) / (2.0 * e);
        assert!((g[0] - gx).abs() < 1e-8 && (g[1] - gy).abs() < 1e-8);
        assert_eq!(b.value(&[0.1, -0.2]), 1.0);
        assert_eq!(b.value(&[0.41, 0.0]), 0.0);
    }

    #[test]
    fn default_catalog_has_five_interior_bumps() {
        for dom in [Domain::unit_ball(2), Domain::unit_ball(3), Domain::annulus(vec![0.0, 0.0], 0.3, 1.0).unwrap()] {
            let t = default_test_functions(&dom);
            assert!(t.len() >= 5, "{dom:?}");
            assert!(t.iter().all(|b| b.fits_in(&dom)));
        }
    }

    #[test]
    fn exact_linear_solution_has_small_residual() {
        for d in [2, 3] {
            let dom = Domain::unit_ball(d);
            let p = Problem::new(dom.clone(), vec![unit_density(d)], Nonlinearity::zero(1)).unwrap();
            let u = SolutionField::from_fn(&dom, Grid::for_domain(&dom, 17), 1, |x, o| {
                o[0] = (1.0 - x.iter().map(|v| v * v).sum::<f64>()) / d as f64
            });
            for r in duality_residual(&u, &p, &default_test_functions(&dom)).unwrap() {
                assert!(r.passed, "{r:?}");
                assert!(r.data > 0.0);
            }
        }
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let dom = Domain::unit_ball(2);
        let p = Problem::new(dom.clone(), vec![DiffuseMeasure::zero(2, 0.1)], Nonlinearity::zero(1)).unwrap();
        let u = SolutionField::zeros(&dom, Grid::for_domain(&dom, 9), 1);
        for r in duality_residual(&u, &p, &default_test_functions(&dom)).unwrap() {
            assert_eq!(r.residual, 0.0);
            assert!(r.passed);
        }
    }

    #[test]
    fn residual_is_linear_in_u_and_mu() {
        let dom = Domain::unit_ball(2);
        let p = Problem::new(dom.clone(), vec![unit_density(2)], Nonlinearity::zero(1)).unwrap();
        let u = SolutionField::from_fn(&dom, Grid::for_domain(&dom, 17), 1, |x, o| o[0] = 0.3 * (1.0 - x[0] * x[0]) * x[1]);
        let tests = default_test_functions(&dom);
        let base = duality_residual(&u, &p, &tests).unwrap();
        let doubled = duality_residual(&u.scaled(2.0), &p, &tests).unwrap();
        let p3 = p.with_measures(vec![unit_density(2).scaled(3.0)]).unwrap();
        let tripled = duality_residual(&u, &p3, &tests).unwrap();
        for ((a, b), c) in base.iter().zip(&doubled).zip(&tripled) {
            assert_eq!(b.energy, 2.0 * a.energy);
            assert!((b.residual - (2.0 * a.energy - a.data)).abs() < 1e-12);
            assert!((c.data - 3.0 * a.data).abs() < 1e-12 * a.data.abs().max(1.0));
        }
        // a field that is not the solution fails somewhere
        assert!(base.iter().any(|r| !r.passed));
    }

    #[test]
    fn surface_data_is_paired_exactly() {
        let dom = Domain::unit_ball(2);
        let sphere = DiffuseMeasure::zero(2, 0.05).with_term(
            Sign::Plus,
            MeasureKind::SphereSurface {
                center: vec![0.0, 0.0],
                radius: 0.5,
                mass: 1.0,
            },
        );
        let p = Problem::new(dom.clone(), vec![sphere], Nonlinearity::zero(1)).unwrap();
        let u = SolutionField::zeros(&dom, Grid::for_domain(&dom, 9), 1);
        let centred = BumpFunction::new(vec![0.0, 0.0], vec![0.6, 0.6]);
        let r = &duality_residual(&u, &p, &[centred.clone()]).unwrap()[0];
        // mean of v over the circle of radius 1/2
        let m = 4096;
        let mean: f64 = (0..m)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                centred.value(&[0.5 * t.cos(), 0.5 * t.sin()])
            })
            .sum::<f64>()
            / m as f64;
        assert!((r.exact_data - mean).abs() < 1e-9, "{} vs {mean}", r.exact_data);
        // shell average, off by O(ε²) plus midpoint error at the shell edges
        assert!((r.data - mean).abs() < 1e-2, "{} vs {mean}", r.data);
    }

    #[test]
    fn support_outside_is_rejected() {
        let dom = Domain::unit_ball(2);
        let p = Problem::new(dom.clone(), vec![unit_density(2)], Nonlinearity::zero(1)).unwrap();
        let u = SolutionField::zeros(&dom, Grid::for_domain(&dom, 9), 1);
        let wide = BumpFunction::new(vec![0.5, 0.0], vec![0.6, 0.2]);
        assert_eq!(duality_residual(&u, &p, &[wide]), Err(OracleError::SupportEscapes(0)));
    }
}
