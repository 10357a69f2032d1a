//! Deterministic quadrature over domains, spheres and flat faces.

use crate::geometry::Domain;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Difference between two refinement levels.
    pub error: f64,
}

/// Midpoint rule on a tensor grid of cells covering the bounding box.
///
/// Cells cut by the boundary are split recursively (`depth` levels) before
/// the indicator is applied at the sub-cell midpoints. The error estimate is
/// the change from the rule on a grid twice as coarse.
pub fn integrate_domain<F>(domain: &Domain, cells_per_axis: usize, depth: u32, f: F) -> Quadrature
where
    F: Fn(&[f64]) -> f64,
{
    let fine = integrate_level(domain, cells_per_axis, depth, &f);
    let coarse = integrate_level(domain, (cells_per_axis / 2).max(1), depth, &f);
    Quadrature {
        value: fine,
        error: (fine - coarse).abs(),
    }
}

fn integrate_level<F>(domain: &Domain, cells: usize, depth: u32, f: &F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let d = domain.dimension();
    let (lo, hi) = domain.bounding_box();
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l) / cells as f64).collect();
    let mut idx = vec![0usize; d];
    let mut center = vec![0.0; d];
    let mut total = 0.0;
    let n_cells = cells.pow(d as u32);
    for _ in 0..n_cells {
        for i in 0..d {
            center[i] = lo[i] + (idx[i] as f64 + 0.5) * width[i];
        }
        total += cell_integral(domain, &center, &width, depth, f);
        for i in 0..d {
            idx[i] += 1;
            if idx[i] < cells {
                break;
            }
            idx[i] = 0;
        }
    }
    total
}

fn cell_integral<F>(domain: &Domain, center: &[f64], width: &[f64], depth: u32, f: &F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let d = center.len();
    let vol: f64 = width.iter().product();
    let half_diag = 0.5 * width.iter().map(|w| w * w).sum::<f64>().sqrt();
    let sd = domain.sdf(center);
    if sd >= half_diag || depth == 0 || sd <= -half_diag {
        if sd > 0.0 {
            return vol * f(center);
        }
        return 0.0;
    }
    let half: Vec<f64> = width.iter().map(|w| 0.5 * w).collect();
    let mut sub = vec![0.0; d];
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        for i in 0..d {
            let s = if corner >> i & 1 == 1 { 0.5 } else { -0.5 };
            sub[i] = center[i] + s * half[i];
        }
        total += cell_integral(domain, &sub, &half, depth - 1, f);
    }
    total
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    // ω_0 = 1, ω_1 = 2, ω_d = ω_{d-2} · 2π / d
    let mut w = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        w *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    w
}

/// Surface area of the unit sphere S^{d-1}.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

/// Quadrature nodes on the sphere |x - c| = r: trapezoid in angle for d = 2,
/// Gauss–Legendre in cos θ times trapezoid in φ for d = 3. Weights sum to the
/// sphere area. Returns `None` for other dimensions.
pub fn sphere_rule(center: &[f64], radius: f64, order: usize) -> Option<Vec<(Vec<f64>, f64)>> {
    use std::f64::consts::PI;
    match center.len() {
        2 => {
            let m = 2 * order.max(2);
            let w = 2.0 * PI * radius / m as f64;
            Some(
                (0..m)
                    .map(|i| {
                        let a = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                        (vec![center[0] + radius * a.cos(), center[1] + radius * a.sin()], w)
                    })
                    .collect(),
            )
        }
        3 => {
            let n = order.max(2);
            let (zs, ws) = gauss_legendre(n);
            let m = 2 * n;
            let mut out = Vec::with_capacity(n * m);
            for (z, wz) in zs.iter().zip(&ws) {
                let s = (1.0 - z * z).sqrt();
                for j in 0..m {
                    let phi = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                    let p = vec![
                        center[0] + radius * s * phi.cos(),
                        center[1] + radius * s * phi.sin(),
                        center[2] + radius * z,
                    ];
                    out.push((p, wz * (2.0 * PI / m as f64) * radius * radius));
                }
            }
            Some(out)
        }
        _ => None,
    }
}

/// Tensor Gauss–Legendre rule on the flat face {x_axis = offset} restricted
/// to [lo_i, hi_i] on the other axes. Weights sum to the face area.
pub fn face_rule(axis: usize, offset: f64, lo: &[f64], hi: &[f64], order: usize) -> Vec<(Vec<f64>, f64)> {
    let d = lo.len();
    let (g, gw) = gauss_legendre(order.max(1));
    let free: Vec<usize> = (0..d).filter(|&i| i != axis).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; free.len()];
    let total = g.len().pow(free.len() as u32);
    for _ in 0..total {
        let mut p = vec![0.0; d];
        p[axis] = offset;
        let mut w = 1.0;
        for (k, &ax) in free.iter().enumerate() {
            let half = 0.5 * (hi[ax] - lo[ax]);
            let mid = 0.5 * (hi[ax] + lo[ax]);
            p[ax] = mid + half * g[idx[k]];
            w *= half * gw[idx[k]];
        }
        out.push((p, w));
        for k in 0..free.len() {
            idx[k] += 1;
            if idx[k] < g.len() {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}
