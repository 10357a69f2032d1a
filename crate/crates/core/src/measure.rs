//! Signed diffuse measures and their additive functionals.
//!
//! Measures are finite sums of non-negative terms with a sign each: densities
//! given by expressions, and surface measures on spheres or flat faces. Point
//! masses have no representation. Surface terms are realized along paths by
//! spreading the mass uniformly over an ε-shell around the surface, which
//! turns local time into an occupation integral with O(ε) bias.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::expr::Expr;
use crate::geometry::Domain;
use crate::path::{occupation_integral, occupation_partials, KilledPath, PathConfig, Trapezoid, Visit, WalkEnd, WalkState, Walker};
use crate::quadrature::{face_rule, integrate_domain, sphere_rule, unit_ball_volume, unit_sphere_area};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{parallel_samples, Estimate, Moments};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("measure dimension {measure} does not match domain dimension {domain}")]
    DimensionMismatch { measure: usize, domain: usize },
    #[error("term {term}: surface does not fit inside the domain with margin {margin}")]
    SurfaceOutsideDomain { term: usize, margin: f64 },
    #[error("term {term}: density is not finite at {at:?}")]
    NonFiniteDensity { term: usize, at: Vec<f64> },
    #[error("term {term}: density is negative at {at:?}")]
    NegativeDensity { term: usize, at: Vec<f64> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("density quadrature did not converge: value {value}, error {error}")]
    QuadratureFailure { value: f64, error: f64 },
    #[error("variance estimate exploded; the integrand is likely not integrable")]
    ExplodingVariance,
    #[error("measures with different mollification widths cannot be combined")]
    IncompatibleMollification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    /// g(x) dx with g ≥ 0 written in the expression grammar.
    Density(Expr),
    /// Uniform mass on the sphere |x - center| = radius.
    SphereSurface { center: Vec<f64>, radius: f64, mass: f64 },
    /// Uniform mass on the face {x_axis = offset, lo_i ≤ x_i ≤ hi_i for i ≠ axis}.
    BoxFaceSurface {
        axis: usize,
        offset: f64,
        lo: Vec<f64>,
        hi: Vec<f64>,
        mass: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureTerm {
    pub sign: Sign,
    /// Non-negative multiplier, used by scaling.
    pub weight: f64,
    pub kind: MeasureKind,
}

impl MeasureTerm {
    fn is_surface(&self) -> bool {
        !matches!(self.kind, MeasureKind::Density(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffuseMeasure {
    dimension: usize,
    terms: Vec<MeasureTerm>,
    mollification: f64,
    /// Densities are capped at this level (the nest restriction).
    density_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveAccumulation {
    pub total: f64,
    pub partials: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalVariation {
    pub value: f64,
    /// Quadrature error estimate on the density part.
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevuzReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub pooled_se: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvBoundReport {
    /// E_m ∫₀^ζ dA^{|μ|}.
    pub lhs: Estimate,
    /// max_x (R² − |x|²)/d · ‖μ‖_TV.
    pub bound: f64,
    pub passed: bool,
}

/// Default mollification width for a step h.
pub fn default_mollification(step: f64) -> f64 {
    5.0 * step.sqrt()
}

impl DiffuseMeasure {
    pub fn zero(dimension: usize, mollification: f64) -> Self {
        Self {
            dimension,
            terms: Vec::new(),
            mollification,
            density_cap: f64::INFINITY,
        }
    }

    pub fn with_term(mut self, sign: Sign, kind: MeasureKind) -> Self {
        self.terms.push(MeasureTerm { sign, weight: 1.0, kind });
        self
    }

    /// Positive density measure with constant or expression density.
    pub fn density(dimension: usize, mollification: f64, g: Expr) -> Self {
        Self::zero(dimension, mollification).with_term(Sign::Plus, MeasureKind::Density(g))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn terms(&self) -> &[MeasureTerm] {
        &self.terms
    }

    pub fn mollification(&self) -> f64 {
        self.mollification
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.weight == 0.0 || term_mass_is_zero(&t.kind))
    }

    pub fn has_surface_terms(&self) -> bool {
        self.terms.iter().any(MeasureTerm::is_surface)
    }

    pub fn density_cap(&self) -> f64 {
        self.density_cap
    }

    /// μ_n: every density truncated at `level`, surface terms kept whole.
    pub fn restricted(&self, level: f64) -> Self {
        Self {
            density_cap: level,
            ..self.clone()
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.weight *= a.abs();
            if a < 0.0 {
                t.sign = t.sign.flip();
            }
        }
        out
    }

    /// Sum in Jordan form: the term lists are concatenated.
    pub fn plus(&self, other: &Self) -> Result<Self, MeasureError> {
        if self.dimension != other.dimension {
            return Err(MeasureError::DimensionMismatch {
                measure: other.dimension,
                domain: self.dimension,
            });
        }
        let both_surface = self.has_surface_terms() && other.has_surface_terms();
        if both_surface && self.mollification != other.mollification {
            return Err(MeasureError::IncompatibleMollification);
        }
        let mollification = if self.has_surface_terms() {
            self.mollification
        } else {
            other.mollification
        };
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self {
            dimension: self.dimension,
            terms,
            mollification,
            density_cap: self.density_cap.min(other.density_cap),
        })
    }

    /// |μ| = μ⁺ + μ⁻ as stored.
    pub fn abs(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.sign = Sign::Plus;
        }
        out
    }

    /// Signed density of the mollified measure at x.
    #[inline]
    pub fn density_at(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.sign.value() * self.term_density(t, x)).sum()
    }

    #[inline]
    pub fn abs_density_at(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| self.term_density(t, x)).sum()
    }

    #[inline]
    fn term_density(&self, term: &MeasureTerm, x: &[f64]) -> f64 {
        if term.weight == 0.0 {
            return 0.0;
        }
        let eps = self.mollification;
        let raw = match &term.kind {
            MeasureKind::Density(g) => g.eval_at(x).min(self.density_cap),
            MeasureKind::SphereSurface { center, radius, mass } => {
                let r = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                if (r - radius).abs() < eps {
                    mass / shell_volume(self.dimension, *radius, eps)
                } else {
                    0.0
                }
            }
            MeasureKind::BoxFaceSurface { axis, offset, lo, hi, mass } => {
                if (x[*axis] - offset).abs() >= eps {
                    return 0.0;
                }
                let inside = (0..self.dimension).all(|i| i == *axis || (lo[i] <= x[i] && x[i] <= hi[i]));
                if inside {
                    mass / (2.0 * eps * face_area(*axis, lo, hi))
                } else {
                    0.0
                }
            }
        };
        term.weight * raw
    }

    /// Checks dimensions, surface placement and density values on a sample
    /// grid of the bounding box.
    pub fn validate(&self, domain: &Domain) -> Result<(), MeasureError> {
        let d = domain.dimension();
        if self.dimension != d {
            return Err(MeasureError::DimensionMismatch {
                measure: self.dimension,
                domain: d,
            });
        }
        let eps = self.mollification;
        if self.has_surface_terms() && !(eps.is_finite() && eps > 0.0) {
            return Err(MeasureError::InvalidParameter(format!("mollification width {eps}")));
        }
        if !(self.density_cap > 0.0) {
            return Err(MeasureError::InvalidParameter(format!("density cap {}", self.density_cap)));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(MeasureError::InvalidParameter(format!("term {i}: weight {}", t.weight)));
            }
            match &t.kind {
                MeasureKind::Density(g) => {
                    for x in sample_grid(domain) {
                        let v = g.eval_at(&x);
                        if !v.is_finite() {
                            return Err(MeasureError::NonFiniteDensity { term: i, at: x });
                        }
                        if v < 0.0 {
                            return Err(MeasureError::NegativeDensity { term: i, at: x });
                        }
                    }
                }
                MeasureKind::SphereSurface { center, radius, mass } => {
                    if center.len() != d {
                        return Err(MeasureError::DimensionMismatch {
                            measure: center.len(),
                            domain: d,
                        });
                    }
                    check_mass(i, *mass)?;
                    if !(radius.is_finite() && *radius > eps) {
                        return Err(MeasureError::InvalidParameter(format!(
                            "term {i}: sphere radius {radius} must exceed the mollification width {eps}"
                        )));
                    }
                    for p in sphere_probe(center, *radius, 4096) {
                        if domain.sdf(&p) <= eps {
                            return Err(MeasureError::SurfaceOutsideDomain { term: i, margin: eps });
                        }
                    }
                }
                MeasureKind::BoxFaceSurface { axis, offset, lo, hi, mass } => {
                    if lo.len() != d || hi.len() != d || *axis >= d {
                        return Err(MeasureError::InvalidParameter(format!("term {i}: face specification")));
                    }
                    check_mass(i, *mass)?;
                    if (0..d).any(|k| k != *axis && !(hi[k] > lo[k])) {
                        return Err(MeasureError::InvalidParameter(format!("term {i}: empty face")));
                    }
                    let order = if d <= 2 { 64 } else { 16 };
                    let mut probes = face_rule(*axis, *offset, lo, hi, order);
                    probes.extend(face_corners(*axis, *offset, lo, hi).into_iter().map(|p| (p, 0.0)));
                    for (p, _) in probes {
                        if domain.sdf(&p) <= eps {
                            return Err(MeasureError::SurfaceOutsideDomain { term: i, margin: eps });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest density value seen on the validation sample grid.
    pub fn sampled_density_sup(&self, domain: &Domain) -> f64 {
        let grid = sample_grid(domain);
        let mut sup: f64 = 0.0;
        for t in &self.terms {
            if let MeasureKind::Density(g) = &t.kind {
                let m = grid.iter().map(|x| g.eval_at(x)).fold(0.0, f64::max);
                sup = sup.max(t.weight * m);
            }
        }
        sup
    }

    /// ‖μ‖_TV as stored: the sum of the term masses.
    pub fn total_variation(&self, domain: &Domain) -> Result<TotalVariation, MeasureError> {
        let cells = match domain.dimension() {
            1 => 1024,
            2 => 128,
            3 => 32,
            _ => 8,
        };
        self.total_variation_with(domain, cells)
    }

    pub fn total_variation_with(&self, domain: &Domain, cells_per_axis: usize) -> Result<TotalVariation, MeasureError> {
        let mut value = 0.0;
        let mut error = 0.0;
        for t in &self.terms {
            match &t.kind {
                MeasureKind::Density(g) => {
                    let cap = self.density_cap;
                    let q = match g.as_constant() {
                        // constant densities only need the volume
                        Some(c) => {
                            let q = integrate_domain(domain, cells_per_axis, 3, |_| 1.0);
                            crate::quadrature::Quadrature {
                                value: c.min(cap) * q.value,
                                error: c.min(cap) * q.error,
                            }
                        }
                        None => integrate_domain(domain, cells_per_axis, 3, |x| g.eval_at(x).min(cap)),
                    };
                    if !(q.value.is_finite() && q.error.is_finite()) || q.error > 0.1 * q.value.abs() + 1e-12 {
                        return Err(MeasureError::QuadratureFailure {
                            value: q.value,
                            error: q.error,
                        });
                    }
                    value += t.weight * q.value;
                    error += t.weight * q.error;
                }
                MeasureKind::SphereSurface { mass, .. } | MeasureKind::BoxFaceSurface { mass, .. } => {
                    value += t.weight * mass;
                }
            }
        }
        Ok(TotalVariation { value, error })
    }

    /// A^μ_ζ along a recorded path.
    pub fn accumulate(&self, path: &KilledPath) -> AdditiveAccumulation {
        AdditiveAccumulation {
            total: occupation_integral(path, |x| self.density_at(x)),
            partials: None,
        }
    }

    /// A^μ at every grid time of the path.
    pub fn accumulate_partials(&self, path: &KilledPath) -> AdditiveAccumulation {
        let partials = occupation_partials(path, |x| self.density_at(x));
        AdditiveAccumulation {
            total: partials.last().copied().unwrap_or(0.0),
            partials: Some(partials),
        }
    }

    /// ⟨μ, v⟩ with surfaces integrated exactly on their support (no
    /// mollification) and densities by domain quadrature. Returns the value
    /// and a quadrature error estimate.
    pub fn pair_with<V>(&self, domain: &Domain, cells_per_axis: usize, v: V) -> Result<(f64, f64), MeasureError>
    where
        V: Fn(&[f64]) -> f64,
    {
        let mut value = 0.0;
        let mut error = 0.0;
        for t in &self.terms {
            let s = t.sign.value() * t.weight;
            match &t.kind {
                MeasureKind::Density(g) => {
                    let cap = self.density_cap;
                    let q = integrate_domain(domain, cells_per_axis, 2, |x| g.eval_at(x).min(cap) * v(x));
                    value += s * q.value;
                    error += t.weight * q.error;
                }
                MeasureKind::SphereSurface { center, radius, mass } => {
                    let (a, e) = sphere_pairing(center, *radius, &v).ok_or_else(|| {
                        MeasureError::InvalidParameter("exact sphere quadrature needs d = 2 or 3".into())
                    })?;
                    let area = unit_sphere_area(self.dimension) * radius.powi(self.dimension as i32 - 1);
                    value += s * mass * a / area;
                    error += t.weight * mass * e / area;
                }
                MeasureKind::BoxFaceSurface { axis, offset, lo, hi, mass } => {
                    let fine: f64 = face_rule(*axis, *offset, lo, hi, 24).iter().map(|(p, w)| w * v(p)).sum();
                    let coarse: f64 = face_rule(*axis, *offset, lo, hi, 12).iter().map(|(p, w)| w * v(p)).sum();
                    let area = face_area(*axis, lo, hi);
                    value += s * mass * fine / area;
                    error += t.weight * mass * (fine - coarse).abs() / area;
                }
            }
        }
        Ok((value, error))
    }

    /// Compares two estimators of the Revuz pairing
    /// E_{h·m} ∫₀ᵗ f(X_θ) dA^μ_θ = ∫₀ᵗ ⟨f·μ, p_θ h⟩ dθ.
    ///
    /// The left side starts paths uniformly in the bounding box and weights
    /// them by h; the right side draws points from μ itself and a uniform
    /// time θ, then transports h by an independent path.
    pub fn revuz_check<F, H>(
        &self,
        domain: &Domain,
        f: F,
        h: H,
        t: f64,
        n_paths: usize,
        cfg: &PathConfig,
    ) -> Result<RevuzReport, MeasureError>
    where
        F: Fn(&[f64]) -> f64 + Sync,
        H: Fn(&[f64]) -> f64 + Sync,
    {
        if !(t.is_finite() && t >= 0.0) {
            return Err(MeasureError::InvalidParameter(format!("time horizon {t}")));
        }
        self.validate(domain)?;
        let d = domain.dimension();
        let (lo, hi) = domain.bounding_box();
        let vol = domain.bounding_box_volume();
        let stop = (t / cfg.step).round() as usize;
        let start_seed = derive_seed(cfg.base_seed, 0x5245_565a_0001);
        let lhs_cfg = cfg.with_seed(derive_seed(cfg.base_seed, 0x5245_565a_0002));
        let lhs_walker = Walker::new(domain, &lhs_cfg);

        let lhs_samples = parallel_samples(n_paths, |i| {
            let mut rng = stream_rng(start_seed, i);
            let x: Vec<f64> = (0..d).map(|k| lo[k] + rng.random::<f64>() * (hi[k] - lo[k])).collect();
            if domain.sdf(&x) <= 0.0 {
                return 0.0;
            }
            let weight = vol * h(&x);
            if weight == 0.0 {
                return 0.0;
            }
            let mut acc = Trapezoid::new(cfg.step, 1);
            let mut state = WalkState::new(d);
            let end = lhs_walker.walk(&x, i, &mut state, |j, p| {
                acc.push(&[f(p) * self.density_at(p)]);
                if j == stop {
                    Visit::Stop
                } else {
                    Visit::Continue
                }
            });
            let mut out = [0.0];
            acc.finish(end, &mut out);
            weight * out[0]
        });
        let lhs = checked_estimate(&lhs_samples)?;

        let mut rhs_mean = 0.0;
        let mut rhs_var = 0.0;
        for (k, term) in self.terms.iter().enumerate() {
            let point_seed = derive_seed(cfg.base_seed, 0x5245_565a_1000 + k as u64);
            let rhs_cfg = cfg.with_seed(derive_seed(cfg.base_seed, 0x5245_565a_2000 + k as u64));
            let walker = Walker::new(domain, &rhs_cfg);
            let samples = parallel_samples(n_paths, |i| {
                let mut rng = stream_rng(point_seed, i);
                let (y, w) = self.sample_term(term, domain, &mut rng);
                if w == 0.0 {
                    return 0.0;
                }
                let fy = f(&y);
                if fy == 0.0 {
                    return 0.0;
                }
                let theta = t * rng.random::<f64>();
                let s = (theta / cfg.step).round() as usize;
                let mut state = WalkState::new(d);
                let mut at = 0.0;
                let end = walker.walk(&y, i, &mut state, |j, p| {
                    if j == s {
                        at = h(p);
                        Visit::Stop
                    } else {
                        Visit::Continue
                    }
                });
                if !matches!(end, WalkEnd::Stopped(_)) {
                    return 0.0;
                }
                term.sign.value() * t * w * fy * at
            });
            let e = checked_estimate(&samples)?;
            rhs_mean += e.mean;
            rhs_var += e.se * e.se;
        }
        let rhs = Estimate {
            mean: rhs_mean,
            se: rhs_var.sqrt(),
            n: n_paths,
        };
        let pooled_se = (lhs.se * lhs.se + rhs.se * rhs.se).sqrt();
        let diff = (lhs.mean - rhs.mean).abs();
        let passed = diff <= 3.0 * pooled_se || diff <= 1e-12 * (1.0 + lhs.mean.abs());
        Ok(RevuzReport {
            lhs,
            rhs,
            pooled_se,
            passed,
        })
    }

    /// Checks E_m ∫₀^ζ dA^{|μ|} ≤ C(Ω,d)·‖μ‖_TV with C = max (R² − |x|²)/d.
    pub fn tv_bound_check(&self, domain: &Domain, n_paths: usize, cfg: &PathConfig) -> Result<TvBoundReport, MeasureError> {
        self.validate(domain)?;
        let tv = self.total_variation(domain)?;
        let d = domain.dimension();
        let (lo, hi) = domain.bounding_box();
        let vol = domain.bounding_box_volume();
        let start_seed = derive_seed(cfg.base_seed, 0x5456_0001);
        let walk_cfg = cfg.with_seed(derive_seed(cfg.base_seed, 0x5456_0002));
        let walker = Walker::new(domain, &walk_cfg);
        let samples = parallel_samples(n_paths, |i| {
            let mut rng = stream_rng(start_seed, i);
            let x: Vec<f64> = (0..d).map(|k| lo[k] + rng.random::<f64>() * (hi[k] - lo[k])).collect();
            if domain.sdf(&x) <= 0.0 {
                return 0.0;
            }
            let mut acc = Trapezoid::new(cfg.step, 1);
            let mut state = WalkState::new(d);
            let end = walker.walk(&x, i, &mut state, |_, p| {
                acc.push(&[self.abs_density_at(p)]);
                Visit::Continue
            });
            let mut out = [0.0];
            acc.finish(end, &mut out);
            vol * out[0]
        });
        let lhs = checked_estimate(&samples)?;
        let bound = domain.max_exit_time_bound() * (tv.value + tv.error);
        Ok(TvBoundReport {
            lhs,
            bound,
            passed: lhs.mean <= bound + 3.0 * lhs.se,
        })
    }

    /// Draws a point from the (mollified, unsigned) term and returns it with
    /// its importance weight, so that E[w·φ(y)] = ∫ φ d|term|.
    fn sample_term<R: Rng>(&self, term: &MeasureTerm, domain: &Domain, rng: &mut R) -> (Vec<f64>, f64) {
        let d = self.dimension;
        let eps = self.mollification;
        match &term.kind {
            MeasureKind::Density(_) => {
                let (lo, hi) = domain.bounding_box();
                let y: Vec<f64> = (0..d).map(|k| lo[k] + rng.random::<f64>() * (hi[k] - lo[k])).collect();
                if domain.sdf(&y) <= 0.0 {
                    return (y, 0.0);
                }
                let w = domain.bounding_box_volume() * self.term_density(term, &y);
                (y, w)
            }
            MeasureKind::SphereSurface { center, radius, mass } => {
                let a = (radius - eps).powi(d as i32);
                let b = (radius + eps).powi(d as i32);
                let r = (a + rng.random::<f64>() * (b - a)).powf(1.0 / d as f64);
                let dir = random_direction(d, rng);
                let y = center.iter().zip(&dir).map(|(c, u)| c + r * u).collect();
                (y, term.weight * mass)
            }
            MeasureKind::BoxFaceSurface { axis, offset, lo, hi, mass } => {
                let y = (0..d)
                    .map(|k| {
                        if k == *axis {
                            offset + eps * (2.0 * rng.random::<f64>() - 1.0)
                        } else {
                            lo[k] + rng.random::<f64>() * (hi[k] - lo[k])
                        }
                    })
                    .collect();
                (y, term.weight * mass)
            }
        }
    }
}

fn term_mass_is_zero(kind: &MeasureKind) -> bool {
    match kind {
        MeasureKind::Density(g) => g.as_constant() == Some(0.0),
        MeasureKind::SphereSurface { mass, .. } | MeasureKind::BoxFaceSurface { mass, .. } => *mass == 0.0,
    }
}

fn check_mass(term: usize, mass: f64) -> Result<(), MeasureError> {
    if mass.is_finite() && mass >= 0.0 {
        Ok(())
    } else {
        Err(MeasureError::InvalidParameter(format!("term {term}: mass {mass}")))
    }
}

/// Volume of {| |x − c| − r | < ε} in R^d.
pub fn shell_volume(d: usize, r: f64, eps: f64) -> f64 {
    unit_ball_volume(d) * ((r + eps).powi(d as i32) - (r - eps).powi(d as i32))
}

fn face_area(axis: usize, lo: &[f64], hi: &[f64]) -> f64 {
    (0..lo.len()).filter(|&k| k != axis).map(|k| hi[k] - lo[k]).product()
}

fn face_corners(axis: usize, offset: f64, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let d = lo.len();
    (0..(1usize << d))
        .filter(|m| m >> axis & 1 == 0)
        .map(|m| {
            (0..d)
                .map(|k| {
                    if k == axis {
                        offset
                    } else if m >> k & 1 == 1 {
                        hi[k]
                    } else {
                        lo[k]
                    }
                })
                .collect()
        })
        .collect()
}

fn random_direction<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Deterministic probe points covering a sphere, for placement checks.
fn sphere_probe(center: &[f64], radius: f64, n: usize) -> Vec<Vec<f64>> {
    if let Some(rule) = sphere_rule(center, radius, 32) {
        return rule.into_iter().map(|(p, _)| p).collect();
    }
    let mut rng = stream_rng(0x5348_454c_4c, 0);
    let d = center.len();
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let u = random_direction(d, &mut rng);
            center.iter().zip(&u).map(|(c, a)| c + radius * a).collect()
        })
        .collect();
    for k in 0..d {
        for s in [-1.0, 1.0] {
            let mut p = center.to_vec();
            p[k] += s * radius;
            out.push(p);
        }
    }
    out
}

/// Mean of v over the sphere times its area, with a refinement error.
fn sphere_pairing<V: Fn(&[f64]) -> f64>(center: &[f64], radius: f64, v: &V) -> Option<(f64, f64)> {
    let fine: f64 = sphere_rule(center, radius, 48)?.iter().map(|(p, w)| w * v(p)).sum();
    let coarse: f64 = sphere_rule(center, radius, 24)?.iter().map(|(p, w)| w * v(p)).sum();
    Some((fine, (fine - coarse).abs()))
}

/// Tensor grid of the bounding box restricted to the domain.
fn sample_grid(domain: &Domain) -> Vec<Vec<f64>> {
    let d = domain.dimension();
    let per_axis = ((20_000f64).powf(1.0 / d as f64).floor() as usize).clamp(3, 201);
    let (lo, hi) = domain.bounding_box();
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    for _ in 0..per_axis.pow(d as u32) {
        let x: Vec<f64> = (0..d)
            .map(|k| lo[k] + (idx[k] as f64 + 0.5) * (hi[k] - lo[k]) / per_axis as f64)
            .collect();
        if domain.sdf(&x) > 0.0 {
            out.push(x);
        }
        for k in 0..d {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

/// Mean and SE, refusing non-finite samples or a single dominating sample.
fn checked_estimate(samples: &[f64]) -> Result<Estimate, MeasureError> {
    let m: Moments = samples.iter().copied().collect();
    let e = m.estimate();
    if !(e.mean.is_finite() && e.se.is_finite()) {
        return Err(MeasureError::ExplodingVariance);
    }
    let sum_sq: f64 = samples.iter().map(|s| s * s).sum();
    let max_sq = samples.iter().map(|s| s * s).fold(0.0, f64::max);
    if samples.len() >= 100 && sum_sq > 0.0 && max_sq > 0.5 * sum_sq {
        return Err(MeasureError::ExplodingVariance);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Scope;
    use crate::path::simulate_killed_path;
    use crate::stats::parallel_estimate;
    use std::f64::consts::PI;

    fn one(d: usize) -> Expr {
        Expr::parse("1", Scope::spatial(d)).unwrap()
    }

    fn sphere(d: usize, r: f64, m: f64, eps: f64) -> DiffuseMeasure {
        DiffuseMeasure::zero(d, eps).with_term(
            Sign::Plus,
            MeasureKind::SphereSurface {
                center: vec![0.0; d],
                radius: r,
                mass: m,
            },
        )
    }

    #[test]
    fn validation_cases() {
        let b = Domain::unit_ball(3);
        DiffuseMeasure::density(3, 0.01, one(3)).validate(&b).unwrap();
        sphere(3, 0.5, 1.0, 0.01).validate(&b).unwrap();
        assert!(matches!(
            sphere(3, 0.95, 1.0, 0.1).validate(&b),
            Err(MeasureError::SurfaceOutsideDomain { .. })
        ));
        let bad = Expr::parse("1/(x1 - x1)", Scope::spatial(3)).unwrap();
        assert!(matches!(
            DiffuseMeasure::density(3, 0.01, bad).validate(&b),
            Err(MeasureError::NonFiniteDensity { .. })
        ));
        let neg = Expr::parse("x1", Scope::spatial(3)).unwrap();
        assert!(matches!(
            DiffuseMeasure::density(3, 0.01, neg).validate(&b),
            Err(MeasureError::NegativeDensity { .. })
        ));
        assert!(matches!(
            DiffuseMeasure::density(2, 0.01, one(2)).validate(&b),
            Err(MeasureError::DimensionMismatch { .. })
        ));
        let face = DiffuseMeasure::zero(2, 0.05).with_term(
            Sign::Minus,
            MeasureKind::BoxFaceSurface {
                axis: 0,
                offset: 0.0,
                lo: vec![0.0, -0.5],
                hi: vec![0.0, 0.5],
                mass: 1.0,
            },
        );
        face.validate(&Domain::unit_ball(2)).unwrap();
    }

    #[test]
    fn total_variation_cases() {
        let b = Domain::unit_ball(3);
        let tv = DiffuseMeasure::density(3, 0.01, one(3)).total_variation(&b).unwrap();
        assert!((tv.value - 4.0 * PI / 3.0).abs() < 5e-3, "{tv:?}");
        assert!((tv.value - 4.0 * PI / 3.0).abs() <= 3.0 * tv.error + 1e-9, "{tv:?}");
        assert_eq!(sphere(3, 0.5, 2.0, 0.01).total_variation(&b).unwrap().value, 2.0);
        let jordan = DiffuseMeasure::density(3, 0.01, one(3))
            .with_term(Sign::Minus, MeasureKind::Density(one(3)));
        let tv2 = jordan.total_variation(&b).unwrap();
        assert!((tv2.value - 2.0 * tv.value).abs() < 1e-12);
    }

    #[test]
    fn shell_density_integrates_to_mass() {
        let d = Domain::unit_ball(2);
        let m = sphere(2, 0.5, 1.5, 0.05);
        let q = integrate_domain(&d, 256, 2, |x| m.density_at(x));
        assert!((q.value - 1.5).abs() < 1e-2, "{q:?}");
    }

    #[test]
    fn accumulation_of_density_is_occupation() {
        let b = Domain::unit_ball(2);
        let cfg = PathConfig::for_domain(&b, 1e-3, 4).unwrap();
        let g = Expr::parse("1 + x1^2", Scope::spatial(2)).unwrap();
        let m = DiffuseMeasure::density(2, 0.1, g.clone());
        let z = DiffuseMeasure::zero(2, 0.1);
        for i in 0..20 {
            let p = simulate_killed_path(&b, &[0.2, 0.2], &cfg, i).unwrap();
            assert_eq!(m.accumulate(&p).total, occupation_integral(&p, |x| g.eval_at(x)));
            assert_eq!(z.accumulate(&p).total, 0.0);
            let acc = m.accumulate_partials(&p);
            let parts = acc.partials.unwrap();
            assert!(parts.windows(2).all(|w| w[1] >= w[0]));
            assert!((acc.total - m.accumulate(&p).total).abs() < 1e-12);
        }
    }

    #[test]
    fn restriction_caps_densities() {
        let g = Expr::parse("10 * x1^2", Scope::spatial(2)).unwrap();
        let m = DiffuseMeasure::density(2, 0.1, g).restricted(2.0);
        assert_eq!(m.density_at(&[0.9, 0.0]), 2.0);
        assert!((m.density_at(&[0.1, 0.0]) - 0.1).abs() < 1e-15);
        assert!((m.sampled_density_sup(&Domain::unit_ball(2)) - 10.0).abs() < 1.0);
    }

    #[test]
    fn pairing_with_surfaces_is_exact() {
        let b = Domain::unit_ball(3);
        let m = sphere(3, 0.5, 2.0, 0.1);
        // mean of x3² over a sphere of radius r is r²/3
        let (v, e) = m.pair_with(&b, 16, |x| x[2] * x[2]).unwrap();
        assert!((v - 2.0 * 0.25 / 3.0).abs() < 1e-12, "{v}");
        assert!(e < 1e-12);
        let dens = DiffuseMeasure::density(2, 0.1, one(2));
        let (v, _) = dens.pair_with(&Domain::unit_ball(2), 128, |_| 1.0).unwrap();
        assert!((v - PI).abs() < 1e-3);
    }

    #[test]
    fn revuz_trivial_cases() {
        let b = Domain::unit_ball(2);
        let cfg = PathConfig::for_domain(&b, 1e-3, 2).unwrap();
        let m = DiffuseMeasure::density(2, 0.1, one(2));
        let r = m.revuz_check(&b, |_| 1.0, |_| 1.0, 0.0, 500, &cfg).unwrap();
        assert_eq!((r.lhs.mean, r.rhs.mean), (0.0, 0.0));
        assert!(r.passed);
        let r = m.revuz_check(&b, |_| 0.0, |_| 1.0, 0.2, 500, &cfg).unwrap();
        assert_eq!((r.lhs.mean, r.rhs.mean), (0.0, 0.0));
        assert!(r.passed);
    }

    #[test]
    fn revuz_density_disk() {
        let b = Domain::unit_ball(2);
        let cfg = PathConfig::for_domain(&b, 1e-3, 12).unwrap();
        let m = DiffuseMeasure::density(2, 0.1, one(2));
        let r = m.revuz_check(&b, |_| 1.0, |_| 1.0, 0.2, 20_000, &cfg).unwrap();
        assert!(r.passed, "{r:?}");
        // both sides are close to |Ω|·E[t ∧ ζ] < 0.2π
        assert!(r.lhs.mean > 0.3 && r.lhs.mean < 0.2 * PI);
    }

    #[test]
    fn revuz_sphere_with_weights() {
        let b = Domain::unit_ball(2);
        let cfg = PathConfig::for_domain(&b, 1e-3, 13).unwrap();
        let m = sphere(2, 0.5, 1.0, 0.1);
        let r = m
            .revuz_check(&b, |x| 1.0 + x[0], |x| 2.0 - x[1] * x[1], 0.2, 20_000, &cfg)
            .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn tv_bound_holds() {
        let b = Domain::unit_ball(2);
        let cfg = PathConfig::for_domain(&b, 2e-3, 6).unwrap();
        for m in [DiffuseMeasure::density(2, 0.1, one(2)), sphere(2, 0.5, 1.0, 0.1)] {
            let r = m.tv_bound_check(&b, 4000, &cfg).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn sphere_potential_matches_radial_solution() {
        // Potential of a uniform unit mass on the circle r0 = 0.5 in the unit
        // disk (generator ½Δ): u = -(1/π) ln(max(r, r0)). At the origin with
        // an ε-shell this is -(1/π)·(shell average of ln r).
        let b = Domain::unit_ball(2);
        let eps = 0.05;
        let cfg = PathConfig::for_domain(&b, 1e-3, 17).unwrap();
        let m = sphere(2, 0.5, 1.0, eps);
        let est = parallel_estimate(10_000, |i| {
            let p = simulate_killed_path(&b, &[0.0, 0.0], &cfg, i).unwrap();
            m.accumulate(&p).total
        });
        let shell_avg = {
            let (a, c) = (0.5 - eps, 0.5 + eps);
            let f = |r: f64| r * r * (2.0 * r.ln() - 1.0) / 4.0;
            (f(c) - f(a)) / ((c * c - a * a) / 2.0)
        };
        let exact = -shell_avg / PI;
        assert!(est.within(exact, 3.0), "{est:?} vs {exact}");
    }

    proptest::proptest! {
        #[test]
        fn accumulate_is_linear(i in 0u64..200, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let dom = Domain::unit_ball(2);
            let cfg = PathConfig::for_domain(&dom, 1e-2, 41).unwrap();
            let m1 = DiffuseMeasure::density(2, 0.1, Expr::parse("1 + x2^2", Scope::spatial(2)).unwrap());
            let m2 = sphere(2, 0.5, 1.0, 0.1);
            let combo = m1.scaled(a).plus(&m2.scaled(b)).unwrap();
            let p = simulate_killed_path(&dom, &[0.3, 0.0], &cfg, i).unwrap();
            let lhs = combo.accumulate(&p).total;
            let rhs = a * m1.accumulate(&p).total + b * m2.accumulate(&p).total;
            let scale = m1.accumulate(&p).total.abs() * a.abs() + m2.accumulate(&p).total.abs() * b.abs() + 1.0;
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn positive_measures_accumulate_monotonically(i in 0u64..200, w in 0.0f64..5.0) {
            let dom = Domain::unit_ball(2);
            let cfg = PathConfig::for_domain(&dom, 1e-2, 43).unwrap();
            let m = sphere(2, 0.4, 1.0, 0.1)
                .plus(&DiffuseMeasure::density(2, 0.1, Expr::parse("abs(x1)", Scope::spatial(2)).unwrap()).scaled(w))
                .unwrap();
            let p = simulate_killed_path(&dom, &[0.0, 0.1], &cfg, i).unwrap();
            let acc = m.accumulate_partials(&p);
            proptest::prop_assert!(acc.total >= 0.0);
            let parts = acc.partials.unwrap();
            proptest::prop_assert!(parts.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn tv_is_subadditive(w1 in 0.0f64..4.0, w2 in 0.0f64..4.0, m in 0.0f64..3.0) {
            let dom = Domain::unit_ball(2);
            let a = DiffuseMeasure::density(2, 0.1, one(2)).scaled(w1);
            let b = sphere(2, 0.5, m, 0.1).scaled(-w2);
            let tv = |x: &DiffuseMeasure| x.total_variation_with(&dom, 32).unwrap().value;
            let sum = a.plus(&b).unwrap();
            proptest::prop_assert!(tv(&sum) <= tv(&a) + tv(&b) + 1e-12);
        }
    }
}
