//! Bounded open domains described by signed-distance primitives.
//!
//! A point belongs to the domain iff its signed distance is strictly positive.
//! Primitive shapes report exact distances inside; the CSG combinators report
//! the usual min/max bounds, which never overestimate the distance inside.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has dimension {got}, domain has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domains must have dimension at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("invalid shape parameters: {0}")]
    InvalidShape(String),
    #[error("point {0:?} is not inside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("domain appears to be empty (no interior point found by sampling)")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, r_in: f64, r_out: f64 },
    Intersection(Vec<Shape>),
    /// Points of the first shape that are not in the second.
    Difference(Box<Shape>, Box<Shape>),
}

impl Shape {
    fn dimension(&self) -> Option<usize> {
        match self {
            Shape::Ball { center, .. } | Shape::Annulus { center, .. } => Some(center.len()),
            Shape::Box { lo, .. } => Some(lo.len()),
            Shape::Intersection(parts) => parts.first().and_then(Shape::dimension),
            Shape::Difference(a, _) => a.dimension(),
        }
    }

    fn check(&self, dim: usize) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidShape(msg));
        let finite = |v: &[f64]| v.iter().all(|c| c.is_finite());
        match self {
            Shape::Ball { center, radius } => {
                if center.len() != dim || !finite(center) {
                    return bad(format!("ball center {center:?}"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("ball radius {radius}"));
                }
            }
            Shape::Box { lo, hi } => {
                if lo.len() != dim || hi.len() != dim || !finite(lo) || !finite(hi) {
                    return bad(format!("box corners {lo:?} {hi:?}"));
                }
                if lo.iter().zip(hi).any(|(l, h)| l >= h) {
                    return bad(format!("box needs lo < hi on every axis: {lo:?} {hi:?}"));
                }
            }
            Shape::Annulus {
                center,
                r_in,
                r_out,
            } => {
                if center.len() != dim || !finite(center) {
                    return bad(format!("annulus center {center:?}"));
                }
                if !(r_in.is_finite() && r_out.is_finite() && *r_in >= 0.0 && r_in < r_out) {
                    return bad(format!("annulus radii {r_in} {r_out}"));
                }
            }
            Shape::Intersection(parts) => {
                if parts.is_empty() {
                    return bad("empty intersection".into());
                }
                for p in parts {
                    p.check(dim)?;
                }
            }
            Shape::Difference(a, b) => {
                a.check(dim)?;
                b.check(dim)?;
            }
        }
        Ok(())
    }

    fn sdf(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Ball { center, radius } => radius - dist(x, center),
            Shape::Box { lo, hi } => {
                // exact Euclidean signed distance of an axis-aligned box
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for i in 0..x.len() {
                    let c = 0.5 * (lo[i] + hi[i]);
                    let half = 0.5 * (hi[i] - lo[i]);
                    let q = (x[i] - c).abs() - half;
                    if q > 0.0 {
                        outside += q * q;
                    }
                    inside = inside.max(q);
                }
                -(outside.sqrt() + inside.min(0.0))
            }
            Shape::Annulus {
                center,
                r_in,
                r_out,
            } => {
                let r = dist(x, center);
                (r_out - r).min(r - r_in)
            }
            Shape::Intersection(parts) => parts
                .iter()
                .map(|p| p.sdf(x))
                .fold(f64::INFINITY, f64::min),
            Shape::Difference(a, b) => a.sdf(x).min(-b.sdf(x)),
        }
    }

    fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Ball { center, radius } => norm(center) + radius,
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| {
                    let m = l.abs().max(h.abs());
                    m * m
                })
                .sum::<f64>()
                .sqrt(),
            Shape::Annulus { center, r_out, .. } => norm(center) + r_out,
            Shape::Intersection(parts) => parts
                .iter()
                .map(Shape::bounding_radius)
                .fold(f64::INFINITY, f64::min),
            Shape::Difference(a, _) => a.bounding_radius(),
        }
    }

    fn aabb(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::Annulus { center, r_out, .. } => (
                center.iter().map(|c| c - r_out).collect(),
                center.iter().map(|c| c + r_out).collect(),
            ),
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::Intersection(parts) => {
                let (mut lo, mut hi) = parts[0].aabb();
                for p in &parts[1..] {
                    let (l, h) = p.aabb();
                    for i in 0..lo.len() {
                        lo[i] = lo[i].max(l[i]);
                        hi[i] = hi[i].min(h[i]);
                    }
                }
                (lo, hi)
            }
            Shape::Difference(a, _) => a.aabb(),
        }
    }
}

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A bounded open set in R^d, d >= 2.
///
/// Immutable after construction; share freely across path workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    dimension: usize,
    shape: Shape,
    bounding_radius: f64,
    aabb: (Vec<f64>, Vec<f64>),
}

impl Domain {
    pub fn new(shape: Shape) -> Result<Self, GeometryError> {
        let dimension = shape
            .dimension()
            .ok_or_else(|| GeometryError::InvalidShape("shape without dimension".into()))?;
        if dimension < 2 {
            return Err(GeometryError::DimensionTooSmall(dimension));
        }
        shape.check(dimension)?;
        let aabb = shape.aabb();
        if aabb.0.iter().zip(&aabb.1).any(|(l, h)| l >= h) {
            return Err(GeometryError::Empty);
        }
        let bounding_radius = shape.bounding_radius();
        let domain = Self {
            dimension,
            shape,
            bounding_radius,
            aabb,
        };
        // CSG combinations can be empty; make sure some interior point exists.
        let mut rng = crate::rng::stream_rng(0x5eed_d0ca, 0);
        domain.sample_interior(&mut rng)?;
        Ok(domain)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, GeometryError> {
        Self::new(Shape::Ball { center, radius })
    }

    /// Ball centered at the origin.
    pub fn unit_ball(dimension: usize) -> Self {
        Self::ball(vec![0.0; dimension], 1.0).expect("unit ball is valid for d >= 2")
    }

    pub fn cube(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        Self::new(Shape::Box { lo, hi })
    }

    pub fn annulus(center: Vec<f64>, r_in: f64, r_out: f64) -> Result<Self, GeometryError> {
        Self::new(Shape::Annulus {
            center,
            r_in,
            r_out,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Radius R of an origin-centered ball containing the domain.
    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Axis-aligned box containing the domain.
    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.aabb.0, &self.aabb.1)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.dimension {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Signed distance without the dimension check. Hot path of the walkers.
    #[inline]
    pub fn sdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        self.shape.sdf(x)
    }

    pub fn signed_distance(&self, x: &[f64]) -> Result<f64, GeometryError> {
        self.check_dim(x)?;
        Ok(self.shape.sdf(x))
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool, GeometryError> {
        Ok(self.signed_distance(x)? > 0.0)
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        self.shape.sdf(x) > 0.0
    }

    /// Mean exit time of Brownian motion (generator ½Δ) from B(0, R), started
    /// at x. Upper bound for the mean lifetime in any domain inside that ball.
    pub fn exit_time_bound(&self, x: &[f64]) -> Result<f64, GeometryError> {
        if !self.contains(x)? {
            return Err(GeometryError::OutsideDomain(x.to_vec()));
        }
        Ok(self.exit_time_bound_unchecked(x))
    }

    pub(crate) fn exit_time_bound_unchecked(&self, x: &[f64]) -> f64 {
        let r = self.bounding_radius;
        let x2: f64 = x.iter().map(|v| v * v).sum();
        ((r * r - x2) / self.dimension as f64).max(0.0)
    }

    /// max over x of the exit-time bound, R²/d.
    pub fn max_exit_time_bound(&self) -> f64 {
        self.bounding_radius * self.bounding_radius / self.dimension as f64
    }

    /// Uniform sample from the domain by rejection from its bounding box.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>, GeometryError> {
        let (lo, hi) = self.bounding_box();
        let mut x = vec![0.0; self.dimension];
        for _ in 0..1_000_000 {
            for i in 0..self.dimension {
                x[i] = rng.random_range(lo[i]..hi[i]);
            }
            if self.contains_unchecked(&x) {
                return Ok(x);
            }
        }
        Err(GeometryError::Empty)
    }

    /// Volume of the bounding box, used as the weight of box-uniform samples.
    pub fn bounding_box_volume(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        lo.iter().zip(hi).map(|(l, h)| h - l).product()
    }
}
