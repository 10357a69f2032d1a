//! Right-hand sides f(x, y), the truncation T_r and sampling falsifiers for
//! the angle-type conditions.

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::Expr;
use crate::geometry::Domain;
use crate::rng::stream_rng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NonlinearityError {
    #[error("nonlinearity needs at least one component")]
    NoComponents,
    #[error("{kind} requires {expected} components, got {got}")]
    ComponentCount { kind: &'static str, expected: usize, got: usize },
    #[error("decay rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("f evaluated to a non-finite value at x = {x:?}, y = {y:?}")]
    NonFinite { x: Vec<f64>, y: Vec<f64> },
    #[error("truncation level must be positive, got {0}")]
    BadLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    /// ⟨f(x,y), y⟩ ≤ 0.
    A4,
    /// ⟨f(x,y) − f(x,y′), y − y′⟩ ≤ 0.
    A4Prime,
    /// f^k(x,y)·y_k ≤ 0 for every k.
    A4DoublePrime,
    /// ⟨f(x,y), y⟩ ≤ −α|y|².
    A5(f64),
}

impl Condition {
    pub fn name(&self) -> String {
        match self {
            Condition::A4 => "A4".into(),
            Condition::A4Prime => "A4prime".into(),
            Condition::A4DoublePrime => "A4doubleprime".into(),
            Condition::A5(a) => format!("A5({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityKind {
    Zero,
    /// f(y) = −αy.
    LinearDecay(f64),
    /// f(y) = (−y₂, y₁).
    Rotation,
    /// f(y) = −y·|y|².
    CubicDecay,
    /// f^k(x, y) = φ_k(x, y_k), each written with a bare `y`.
    Componentwise(Vec<Expr>),
    /// f^k(x, y) written with y1..yn.
    ExpressionVector(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    n_components: usize,
    kind: NonlinearityKind,
    declared: Vec<Condition>,
}

impl Nonlinearity {
    pub fn new(n_components: usize, kind: NonlinearityKind, declared: Vec<Condition>) -> Result<Self, NonlinearityError> {
        if n_components == 0 {
            return Err(NonlinearityError::NoComponents);
        }
        let need = |kind: &'static str, expected: usize| {
            if n_components == expected {
                Ok(())
            } else {
                Err(NonlinearityError::ComponentCount {
                    kind,
                    expected,
                    got: n_components,
                })
            }
        };
        match &kind {
            NonlinearityKind::LinearDecay(a) if !(a.is_finite() && *a > 0.0) => return Err(NonlinearityError::BadRate(*a)),
            NonlinearityKind::Rotation => need("rotation", 2)?,
            NonlinearityKind::Componentwise(e) => need("componentwise", e.len())?,
            NonlinearityKind::ExpressionVector(e) => need("expression", e.len())?,
            _ => {}
        }
        for c in &declared {
            if let Condition::A5(a) = c {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(NonlinearityError::BadRate(*a));
                }
            }
        }
        Ok(Self {
            n_components,
            kind,
            declared,
        })
    }

    pub fn zero(n_components: usize) -> Self {
        Self::new(n_components, NonlinearityKind::Zero, Vec::new()).expect("zero nonlinearity")
    }

    pub fn linear_decay(n_components: usize, alpha: f64) -> Result<Self, NonlinearityError> {
        Self::new(
            n_components,
            NonlinearityKind::LinearDecay(alpha),
            vec![Condition::A4, Condition::A4Prime, Condition::A4DoublePrime, Condition::A5(alpha)],
        )
    }

    pub fn rotation() -> Self {
        Self::new(2, NonlinearityKind::Rotation, vec![Condition::A4]).expect("rotation")
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn declared(&self) -> &[Condition] {
        &self.declared
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NonlinearityKind::Zero)
    }

    /// True when the declared set implies the angle condition. The zero map
    /// satisfies everything.
    pub fn declares_angle_condition(&self) -> bool {
        self.is_zero()
            || self
                .declared
                .iter()
                .any(|c| matches!(c, Condition::A4 | Condition::A4DoublePrime | Condition::A5(_)))
    }

    pub fn declares(&self, probe: fn(&Condition) -> bool) -> bool {
        self.is_zero() || self.declared.iter().any(probe)
    }

    /// Largest declared A5 rate.
    pub fn uniform_rate(&self) -> Option<f64> {
        self.declared
            .iter()
            .filter_map(|c| if let Condition::A5(a) = c { Some(*a) } else { None })
            .reduce(f64::max)
    }

    /// Writes f(x, y) into `out`; returns false if any entry is not finite.
    #[inline]
    pub fn evaluate_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> bool {
        match &self.kind {
            NonlinearityKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            NonlinearityKind::LinearDecay(a) => {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = -a * v;
                }
            }
            NonlinearityKind::Rotation => {
                out[0] = -y[1];
                out[1] = y[0];
            }
            NonlinearityKind::CubicDecay => {
                let n2: f64 = y.iter().map(|v| v * v).sum();
                for (o, v) in out.iter_mut().zip(y) {
                    *o = -v * n2;
                }
            }
            NonlinearityKind::Componentwise(e) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = e[k].eval(x, &y[k..k + 1]);
                }
            }
            NonlinearityKind::ExpressionVector(e) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = e[k].eval(x, y);
                }
            }
        }
        out.iter().all(|v| v.is_finite())
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, NonlinearityError> {
        let mut out = vec![0.0; self.n_components];
        if self.evaluate_into(x, y, &mut out) {
            Ok(out)
        } else {
            Err(NonlinearityError::NonFinite {
                x: x.to_vec(),
                y: y.to_vec(),
            })
        }
    }

    /// T_r(f)(x, y) written into `out`; returns whether the truncation was
    /// active, or `None` on a non-finite value.
    #[inline]
    pub fn evaluate_truncated_into(&self, x: &[f64], y: &[f64], level: f64, out: &mut [f64]) -> Option<bool> {
        if !self.evaluate_into(x, y, out) {
            return None;
        }
        Some(truncate_in_place(out, level))
    }

    /// Falsification by sampling: x uniform in Ω, y uniform in the cube
    /// [−box_radius, box_radius]ⁿ. Each sample index draws the same (x, y, y′)
    /// whatever the condition, so verdicts of related conditions are
    /// comparable.
    pub fn check_condition(
        &self,
        condition: Condition,
        domain: &Domain,
        n_samples: usize,
        box_radius: f64,
        seed: u64,
    ) -> ConditionReport {
        let n = self.n_components;
        let results: Vec<Option<Sample>> = (0..n_samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i);
                let x = domain.sample_interior(&mut rng).ok()?;
                let y: Vec<f64> = (0..n).map(|_| box_radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
                let y2: Vec<f64> = (0..n).map(|_| box_radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
                let f = self.evaluate(&x, &y).ok()?;
                let scale = 1.0 + f.iter().zip(&y).map(|(a, b)| (a * b).abs()).sum::<f64>();
                let tol = 1e-12 * scale;
                let (value, excess) = match condition {
                    Condition::A4 => {
                        let s = dot(&f, &y);
                        (s, s - tol)
                    }
                    Condition::A5(alpha) => {
                        let s = dot(&f, &y) + alpha * dot(&y, &y);
                        (s, s - tol)
                    }
                    Condition::A4Prime => {
                        let f2 = self.evaluate(&x, &y2).ok()?;
                        let df: Vec<f64> = f.iter().zip(&f2).map(|(a, b)| a - b).collect();
                        let dy: Vec<f64> = y.iter().zip(&y2).map(|(a, b)| a - b).collect();
                        let scale = 1.0 + df.iter().zip(&dy).map(|(a, b)| (a * b).abs()).sum::<f64>();
                        let s = dot(&df, &dy);
                        (s, s - 1e-12 * scale)
                    }
                    Condition::A4DoublePrime => {
                        let per = tol / n as f64;
                        (0..n)
                            .map(|k| {
                                let s = f[k] * y[k];
                                (s, s - per)
                            })
                            .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
                    }
                };
                let y2 = matches!(condition, Condition::A4Prime).then_some(y2);
                Some(Sample { x, y, y2, value, excess })
            })
            .collect();
        let mut worst: Option<Sample> = None;
        let mut tested = 0;
        for s in results.into_iter().flatten() {
            tested += 1;
            if worst.as_ref().is_none_or(|w| s.excess > w.excess) {
                worst = Some(s);
            }
        }
        let holds = worst.as_ref().is_none_or(|w| w.excess <= 0.0);
        ConditionReport {
            condition,
            holds_on_sample: holds,
            samples: tested,
            worst: worst.map(|s| Violation {
                x: s.x,
                y: s.y,
                y_other: s.y2,
                value: s.value,
            }),
        }
    }
}

struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    y2: Option<Vec<f64>>,
    value: f64,
    excess: f64,
}

/// The sample with the largest condition statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Second point for the monotonicity test.
    pub y_other: Option<Vec<f64>>,
    /// Statistic that should be ≤ 0: ⟨f,y⟩, ⟨f,y⟩ + α|y|², the pair product,
    /// or the largest f^k·y_k.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub condition: Condition,
    pub holds_on_sample: bool,
    pub samples: usize,
    pub worst: Option<Violation>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// T_r(y) = r·y / max(|y|, r).
pub fn truncate(y: &[f64], r: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    truncate_in_place(&mut out, r);
    out
}

/// Applies T_r in place; returns whether the projection changed `y`.
#[inline]
pub fn truncate_in_place(y: &mut [f64], r: f64) -> bool {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= r {
        return false;
    }
    let c = r / norm;
    y.iter_mut().for_each(|v| *v *= c);
    true
}

/// Truncation level n(m) = n₀·2^m at Picard sweep m.
pub fn truncation_level(base: f64, sweep: usize) -> f64 {
    base * 2f64.powi(sweep.min(1000) as i32)
}
