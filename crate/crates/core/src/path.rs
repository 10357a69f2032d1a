//! Discretized Brownian motion killed on leaving the domain.
//!
//! The walk uses Gaussian increments of per-coordinate variance `h` (the
//! process generated by ½Δ). A path is killed at the first step whose signed
//! distance drops to `δ = k·√h` or below. Moving the boundary inward by
//! `k ≈ 0.5826` standard deviations compensates for crossings missed between
//! monitoring dates.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{Domain, GeometryError};
use crate::rng::stream_rng;

/// Continuity-correction constant ζ(1/2)/√(2π) for discretely monitored
/// Brownian barriers.
pub const DISCRETE_MONITORING_SHIFT: f64 = 0.582_597_157_939_010_7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("exit tolerance must be non-negative, got {0}")]
    BadTolerance(f64),
    #[error("max_steps * step = {horizon} is below ten times the worst exit-time bound {bound}")]
    HorizonTooShort { horizon: f64, bound: f64 },
    #[error("start point is not inside the domain")]
    StartOutside,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub step: f64,
    pub max_steps: usize,
    /// Killing threshold δ on the signed distance.
    pub exit_tolerance: f64,
    pub base_seed: u64,
}

impl PathConfig {
    pub fn new(step: f64, max_steps: usize, exit_tolerance_factor: f64, base_seed: u64) -> Result<Self, PathError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(PathError::BadStep(step));
        }
        if !(exit_tolerance_factor.is_finite() && exit_tolerance_factor >= 0.0) {
            return Err(PathError::BadTolerance(exit_tolerance_factor));
        }
        Ok(Self {
            step,
            max_steps,
            exit_tolerance: exit_tolerance_factor * step.sqrt(),
            base_seed,
        })
    }

    /// Defaults for a domain: horizon of twenty worst-case mean exit times.
    pub fn for_domain(domain: &Domain, step: f64, base_seed: u64) -> Result<Self, PathError> {
        let max_steps = Self::default_max_steps(domain, step);
        Self::new(step, max_steps, DISCRETE_MONITORING_SHIFT, base_seed)
    }

    pub fn default_max_steps(domain: &Domain, step: f64) -> usize {
        (20.0 * domain.max_exit_time_bound() / step).ceil() as usize + 1
    }

    pub fn exit_tolerance_factor(&self) -> f64 {
        self.exit_tolerance / self.step.sqrt()
    }

    pub fn with_seed(&self, base_seed: u64) -> Self {
        Self { base_seed, ..*self }
    }

    pub fn validate(&self, domain: &Domain) -> Result<(), PathError> {
        let horizon = self.max_steps as f64 * self.step;
        let bound = domain.max_exit_time_bound();
        if horizon < 10.0 * bound {
            return Err(PathError::HorizonTooShort { horizon, bound });
        }
        Ok(())
    }
}

/// How a streamed walk ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkEnd {
    /// First position at or below the killing threshold has this index.
    Killed(usize),
    /// The visitor asked to stop at this (interior) index.
    Stopped(usize),
    /// `max_steps` increments without exit; last index is interior.
    Truncated(usize),
}

impl WalkEnd {
    pub fn index(self) -> usize {
        match self {
            WalkEnd::Killed(i) | WalkEnd::Stopped(i) | WalkEnd::Truncated(i) => i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visit {
    Continue,
    Stop,
}

/// Reusable buffers for streamed walks.
#[derive(Debug, Clone)]
pub struct WalkState {
    /// Position of the last generated point (the killed point when killed).
    pub pos: Vec<f64>,
    /// Position preceding `pos`.
    pub prev: Vec<f64>,
    pub prev_sd: f64,
    pub last_sd: f64,
}

impl WalkState {
    pub fn new(dimension: usize) -> Self {
        Self {
            pos: vec![0.0; dimension],
            prev: vec![0.0; dimension],
            prev_sd: 0.0,
            last_sd: 0.0,
        }
    }

    /// Crossing estimate: interpolate the signed distance linearly along the
    /// last increment.
    pub fn exit_point(&self) -> Vec<f64> {
        if self.last_sd > 0.0 {
            return self.pos.clone();
        }
        let denom = self.prev_sd - self.last_sd;
        let lambda = if denom > 0.0 { self.prev_sd / denom } else { 1.0 };
        self.prev
            .iter()
            .zip(&self.pos)
            .map(|(a, b)| a + lambda * (b - a))
            .collect()
    }
}

/// Streams killed paths without storing them.
#[derive(Debug, Clone, Copy)]
pub struct Walker<'a> {
    pub domain: &'a Domain,
    pub cfg: &'a PathConfig,
    sqrt_h: f64,
}

impl<'a> Walker<'a> {
    pub fn new(domain: &'a Domain, cfg: &'a PathConfig) -> Self {
        Self {
            domain,
            cfg,
            sqrt_h: cfg.step.sqrt(),
        }
    }

    /// Walk from `start`, calling `visit(j, X_j)` on every position that is
    /// still alive (the start included). The first killing check happens
    /// after the first increment, so lifetimes are at least one step.
    pub fn walk<F>(&self, start: &[f64], path_index: u64, state: &mut WalkState, mut visit: F) -> WalkEnd
    where
        F: FnMut(usize, &[f64]) -> Visit,
    {
        let mut rng = stream_rng(self.cfg.base_seed, path_index);
        let delta = self.cfg.exit_tolerance;
        state.pos.copy_from_slice(start);
        state.last_sd = self.domain.sdf(start);
        let mut j = 0usize;
        loop {
            if visit(j, &state.pos) == Visit::Stop {
                return WalkEnd::Stopped(j);
            }
            if j == self.cfg.max_steps {
                return WalkEnd::Truncated(j);
            }
            state.prev.copy_from_slice(&state.pos);
            state.prev_sd = state.last_sd;
            for c in state.pos.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += self.sqrt_h * z;
            }
            j += 1;
            state.last_sd = self.domain.sdf(&state.pos);
            if state.last_sd <= delta {
                return WalkEnd::Killed(j);
            }
        }
    }

    /// Lifetime ζ = (lifetime index)·h of a single path.
    pub fn lifetime(&self, start: &[f64], path_index: u64, state: &mut WalkState) -> (f64, bool) {
        let end = self.walk(start, path_index, state, |_, _| Visit::Continue);
        (end.index() as f64 * self.cfg.step, matches!(end, WalkEnd::Truncated(_)))
    }
}

/// One recorded trajectory of the killed walk.
#[derive(Debug, Clone, PartialEq)]
pub struct KilledPath {
    dimension: usize,
    step: f64,
    exit_tolerance: f64,
    /// Flattened positions X_0..X_last (the killed point included).
    positions: Vec<f64>,
    pub lifetime_index: usize,
    pub exit_point: Vec<f64>,
    pub truncated: bool,
}

impl KilledPath {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dimension..(j + 1) * self.dimension]
    }

    /// Positions at which the path is alive: indices `0..lifetime_index`
    /// (and the final index too when truncated).
    pub fn alive_positions(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dimension).take(self.alive_count())
    }

    fn alive_count(&self) -> usize {
        if self.truncated {
            self.lifetime_index + 1
        } else {
            self.lifetime_index
        }
    }

    pub fn lifetime(&self) -> f64 {
        self.lifetime_index as f64 * self.step
    }
}

pub fn simulate_killed_path(
    domain: &Domain,
    start: &[f64],
    cfg: &PathConfig,
    path_index: u64,
) -> Result<KilledPath, PathError> {
    if !domain.contains(start)? {
        return Err(PathError::StartOutside);
    }
    let d = domain.dimension();
    let walker = Walker::new(domain, cfg);
    let mut state = WalkState::new(d);
    let mut positions = Vec::with_capacity(d * 64);
    let end = walker.walk(start, path_index, &mut state, |_, x| {
        positions.extend_from_slice(x);
        Visit::Continue
    });
    let (lifetime_index, truncated, exit_point) = match end {
        WalkEnd::Killed(k) => {
            positions.extend_from_slice(&state.pos);
            (k, false, state.exit_point())
        }
        WalkEnd::Truncated(k) | WalkEnd::Stopped(k) => (k, true, state.pos.clone()),
    };
    Ok(KilledPath {
        dimension: d,
        step: cfg.step,
        exit_tolerance: cfg.exit_tolerance,
        positions,
        lifetime_index,
        exit_point,
        truncated,
    })
}

/// Streaming trapezoid rule for ∫ g(X_t) dt on the uniform time grid.
///
/// On a killed path the value at the killed point is replaced by the value at
/// the last live position, so that g ≡ 1 integrates to the lifetime exactly.
#[derive(Debug, Clone)]
pub struct Trapezoid {
    step: f64,
    sum: Vec<f64>,
    first: Vec<f64>,
    last: Vec<f64>,
    count: usize,
}

impl Trapezoid {
    pub fn new(step: f64, channels: usize) -> Self {
        Self {
            step,
            sum: vec![0.0; channels],
            first: vec![0.0; channels],
            last: vec![0.0; channels],
            count: 0,
        }
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.count = 0;
    }

    pub fn channels(&self) -> usize {
        self.sum.len()
    }

    /// Record the integrand values at the next live grid point.
    #[inline]
    pub fn push(&mut self, g: &[f64]) {
        if self.count == 0 {
            self.first.copy_from_slice(g);
        }
        self.last.copy_from_slice(g);
        for (s, v) in self.sum.iter_mut().zip(g) {
            *s += v;
        }
        self.count += 1;
    }

    /// Integral from 0 to the time of the last pushed point.
    pub fn stopped(&self, out: &mut [f64]) {
        for c in 0..self.sum.len() {
            out[c] = if self.count == 0 {
                0.0
            } else {
                self.step * (self.sum[c] - 0.5 * self.first[c] - 0.5 * self.last[c])
            };
        }
    }

    /// Integral up to the killing time, one step after the last pushed point.
    pub fn killed(&self, out: &mut [f64]) {
        for c in 0..self.sum.len() {
            out[c] = if self.count == 0 {
                0.0
            } else {
                self.step * (self.sum[c] - 0.5 * self.first[c] + 0.5 * self.last[c])
            };
        }
    }

    pub fn finish(&self, end: WalkEnd, out: &mut [f64]) {
        match end {
            WalkEnd::Killed(_) => self.killed(out),
            _ => self.stopped(out),
        }
    }
}

/// Cumulative trapezoid values at t_0..t_last along a recorded path.
pub fn occupation_partials<G: Fn(&[f64]) -> f64>(path: &KilledPath, integrand: G) -> Vec<f64> {
    let mut acc = Trapezoid::new(path.step, 1);
    let mut out = [0.0];
    let mut partials = Vec::with_capacity(path.len());
    for x in path.alive_positions() {
        acc.push(&[integrand(x)]);
        acc.stopped(&mut out);
        partials.push(out[0]);
    }
    if !path.truncated {
        acc.killed(&mut out);
        partials.push(out[0]);
    }
    partials
}

/// ∫_0^ζ g(X_t) dt by the trapezoid rule over the recorded grid. The
/// integrand is only evaluated at live positions.
pub fn occupation_integral<G: Fn(&[f64]) -> f64>(path: &KilledPath, integrand: G) -> f64 {
    let mut acc = Trapezoid::new(path.step, 1);
    for x in path.alive_positions() {
        acc.push(&[integrand(x)]);
    }
    let mut out = [0.0];
    if path.truncated {
        acc.stopped(&mut out);
    } else {
        acc.killed(&mut out);
    }
    out[0]
}

/// Index of the first recorded position that leaves `g_domain`, capped at the
/// lifetime index: τ_G ∧ ζ on the grid.
///
/// Leaving is judged with the same shifted threshold that kills the path, so
/// `g_domain = Ω` yields the lifetime index exactly.
pub fn subdomain_exit(path: &KilledPath, g_domain: &Domain) -> usize {
    let cap = path.lifetime_index;
    (0..cap)
        .find(|&j| g_domain.sdf(path.position(j)) <= path.exit_tolerance)
        .unwrap_or(cap)
}
