//! Tensor-grid fields with multilinear interpolation, zero outside Ω.

use crate::geometry::Domain;

/// Nodes on the bounding box of a domain, ends included.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    spacing: Vec<f64>,
    nodes: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, nodes: Vec<usize>) -> Self {
        assert!(lo.len() == hi.len() && lo.len() == nodes.len(), "grid dimension mismatch");
        assert!(nodes.iter().all(|&n| n >= 2), "need at least two nodes per axis");
        let spacing = lo
            .iter()
            .zip(&hi)
            .zip(&nodes)
            .map(|((l, h), &n)| (h - l) / (n - 1) as f64)
            .collect();
        let mut strides = Vec::with_capacity(nodes.len());
        let mut s = 1;
        for &n in &nodes {
            strides.push(s);
            s *= n;
        }
        Self {
            lo,
            spacing,
            nodes,
            strides,
        }
    }

    pub fn for_domain(domain: &Domain, nodes_per_axis: usize) -> Self {
        let (lo, hi) = domain.bounding_box();
        Self::new(lo.to_vec(), hi.to_vec(), vec![nodes_per_axis; domain.dimension()])
    }

    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        self.nodes.iter().zip(&self.strides).map(|(&n, &s)| (node / s) % n).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn position(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.position_into(node, &mut out);
        out
    }

    pub fn position_into(&self, node: usize, out: &mut [f64]) {
        for k in 0..self.dimension() {
            let i = (node / self.strides[k]) % self.nodes[k];
            out[k] = self.lo[k] + i as f64 * self.spacing[k];
        }
    }

    /// Node closest to x, if x lies in the grid box.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut node = 0;
        for k in 0..self.dimension() {
            let t = ((x[k] - self.lo[k]) / self.spacing[k]).round();
            if t < 0.0 || t > (self.nodes[k] - 1) as f64 {
                return None;
            }
            node += t as usize * self.strides[k];
        }
        Some(node)
    }
}

/// n-component field on a grid, with per-node standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    grid: Grid,
    domain: Domain,
    components: usize,
    /// Node-major: `values[node * components + k]`.
    values: Vec<f64>,
    se: Vec<f64>,
    interior: Vec<bool>,
}

impl SolutionField {
    pub fn zeros(domain: &Domain, grid: Grid, components: usize) -> Self {
        assert_eq!(domain.dimension(), grid.dimension(), "grid and domain dimensions differ");
        let interior = (0..grid.len()).map(|i| domain.sdf(&grid.position(i)) > 0.0).collect();
        let n = grid.len() * components;
        Self {
            grid,
            domain: domain.clone(),
            components,
            values: vec![0.0; n],
            se: vec![0.0; n],
            interior,
        }
    }

    /// Field sampled from a function at the interior nodes.
    pub fn from_fn<F>(domain: &Domain, grid: Grid, components: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let mut out = Self::zeros(domain, grid, components);
        let mut x = vec![0.0; domain.dimension()];
        for node in 0..out.grid.len() {
            if out.interior[node] {
                out.grid.position_into(node, &mut x);
                f(&x, &mut out.values[node * components..(node + 1) * components]);
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.interior[i]).collect()
    }

    pub fn node_values(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn node_se(&self, node: usize) -> &[f64] {
        &self.se[node * self.components..(node + 1) * self.components]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn standard_errors(&self) -> &[f64] {
        &self.se
    }

    /// Sets a node's values; exterior nodes stay zero.
    pub fn set_node(&mut self, node: usize, values: &[f64], se: &[f64]) {
        if !self.interior[node] {
            return;
        }
        let c = self.components;
        self.values[node * c..(node + 1) * c].copy_from_slice(values);
        self.se[node * c..(node + 1) * c].copy_from_slice(se);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out.se.iter_mut().for_each(|v| *v *= a.abs());
        out
    }

    pub fn has_same_grid(&self, other: &Self) -> bool {
        self.grid == other.grid && self.components == other.components
    }

    /// max over nodes of the Euclidean norm of the node vector.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.components)
            .map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// max over nodes and components of |self − other|.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Multilinear interpolation; zero outside Ω.
    #[inline]
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.domain.sdf(x) <= 0.0 {
            return;
        }
        self.interpolate_into(x, out);
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Multilinear interpolation of the node values, without the domain test.
    #[inline]
    pub fn interpolate_into(&self, x: &[f64], out: &mut [f64]) {
        self.interpolate_slice(&self.values, x, out);
    }

    /// Multilinearly interpolated node standard errors; zero outside Ω.
    pub fn se_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.domain.sdf(x) > 0.0 {
            self.interpolate_slice(&self.se, x, out);
        }
    }

    pub fn se_at_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components];
        self.se_into(x, &mut out);
        out
    }

    #[inline]
    fn interpolate_slice(&self, data: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.grid.dimension();
        let c = self.components;
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        debug_assert!(d <= 8);
        for k in 0..d {
            let n = self.grid.nodes[k];
            let t = ((x[k] - self.grid.lo[k]) / self.grid.spacing[k]).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            frac[k] = t - i as f64;
            base += i * self.grid.strides[k];
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut node = base;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    node += self.grid.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = &data[node * c..(node + 1) * c];
            for (o, a) in out.iter_mut().zip(v) {
                *o += w * a;
            }
        }
    }

    /// Bound on the multilinear interpolation error near x: per axis,
    /// |second difference| / 8 at the nearest node, summed over axes. The
    /// worst component is returned; it is zero on the nodes themselves.
    pub fn interpolation_error(&self, x: &[f64]) -> f64 {
        if self.domain.sdf(x) <= 0.0 {
            return 0.0;
        }
        let Some(node) = self.grid.nearest_node(x) else { return 0.0 };
        let on_node = (0..self.grid.dimension()).all(|k| {
            let t = (x[k] - self.grid.lo[k]) / self.grid.spacing[k];
            (t - t.round()).abs() < 1e-9
        });
        if on_node {
            return 0.0;
        }
        let idx = self.grid.multi_index(node);
        let c = self.components;
        let mut worst: f64 = 0.0;
        for k in 0..c {
            let mut total = 0.0;
            for a in 0..self.grid.dimension() {
                let i = idx[a].clamp(1, self.grid.nodes[a] - 2);
                let s = self.grid.strides[a];
                let centre = node - idx[a] * s + i * s;
                let v = |n: usize| self.values[n * c + k];
                total += (v(centre + s) - 2.0 * v(centre) + v(centre - s)).abs() / 8.0;
            }
            worst = worst.max(total);
        }
        worst
    }

    /// Median of all interior-node standard errors.
    pub fn median_se(&self) -> f64 {
        let mut v: Vec<f64> = self
            .interior_nodes()
            .into_iter()
            .flat_map(|n| self.node_se(n).to_vec())
            .collect();
        crate::stats::median(&mut v)
    }

    pub fn max_se(&self) -> f64 {
        self.se.iter().copied().fold(0.0, f64::max)
    }
}
