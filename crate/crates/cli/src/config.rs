//! TOML run configuration and its translation into a solver problem.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use semilin::expr::{Expr, Scope};
use semilin::geometry::{Domain, Shape};
use semilin::measure::{default_mollification, DiffuseMeasure, MeasureKind, Sign};
use semilin::nonlinearity::{Condition, Nonlinearity, NonlinearityKind};
use semilin::solver::{Problem, SolverConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: impl Into<String>, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub domain: RawDomain,
    #[serde(default)]
    pub measure: Vec<RawMeasure>,
    #[serde(default)]
    pub nonlinearity: Option<RawNonlinearity>,
    #[serde(default)]
    pub solver: RawSolver,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDomain {
    pub shape: String,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub r_in: Option<f64>,
    pub r_out: Option<f64>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMeasure {
    /// 1-based solution component the term belongs to.
    #[serde(default = "one")]
    pub component: usize,
    #[serde(default = "plus_one")]
    pub sign: i64,
    pub kind: String,
    pub expr: Option<String>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub mass: Option<f64>,
    /// 1-based axis of a box face.
    pub axis: Option<usize>,
    pub offset: Option<f64>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

fn plus_one() -> i64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNonlinearity {
    pub kind: String,
    pub components: Option<usize>,
    pub alpha: Option<f64>,
    pub exprs: Option<Vec<String>>,
    pub declared: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub grid_resolution: Option<usize>,
    pub paths_per_node: Option<usize>,
    pub step: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
    pub truncation_base: Option<f64>,
    pub max_steps: Option<usize>,
    pub mollification: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub revuz: bool,
    pub martingale: bool,
    pub stampacchia: bool,
    pub duality: bool,
    pub dynkin: bool,
    pub uniqueness_probe: bool,
    pub revuz_paths: usize,
    pub revuz_time: f64,
    pub martingale_paths: usize,
    pub martingale_start: Option<Vec<f64>>,
    pub martingale_checkpoints: Vec<f64>,
    pub dynkin_paths: usize,
    /// Fraction of the inradius at the centre used for the sub-ball G.
    pub dynkin_radius_fraction: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            revuz: false,
            martingale: false,
            stampacchia: false,
            duality: false,
            dynkin: false,
            uniqueness_probe: false,
            revuz_paths: 20_000,
            revuz_time: 0.2,
            martingale_paths: 4000,
            martingale_start: None,
            martingale_checkpoints: vec![0.05, 0.1, 0.2],
            dynkin_paths: 4000,
            dynkin_radius_fraction: 0.5,
        }
    }
}

impl VerifyConfig {
    pub fn any_enabled(&self) -> bool {
        self.revuz || self.martingale || self.stampacchia || self.duality || self.dynkin || self.uniqueness_probe
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub samples: usize,
    pub box_radius: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            box_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Nodes per axis of the finite-difference reference grid.
    pub fd_resolution: usize,
    pub radial_points: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            fd_resolution: 129,
            radial_points: 10_000,
        }
    }
}

/// Fully validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Problem,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
    pub check: CheckConfig,
    pub oracle: OracleConfig,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Syntax { message, .. } => ConfigError::Syntax {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        raw.resolve()
    }
}

impl RawConfig {
    pub fn resolve(self) -> Result<RunConfig, ConfigError> {
        let domain = self.domain.build()?;
        let d = domain.dimension();
        let solver = self.solver.build(self.seed.unwrap_or(0))?;
        let eps = match self.solver.mollification {
            Some(e) if !(e.is_finite() && e > 0.0) => return Err(field_err("solver.mollification", "must be positive")),
            Some(e) => e,
            None => default_mollification(solver.step),
        };

        let from_measures = self.measure.iter().map(|m| m.component).max().unwrap_or(1);
        let nonlinearity = match &self.nonlinearity {
            Some(raw) => raw.build(d, from_measures)?,
            None => Nonlinearity::zero(from_measures),
        };
        let n = nonlinearity.n_components();
        let mut measures = vec![DiffuseMeasure::zero(d, eps); n];
        for (i, m) in self.measure.iter().enumerate() {
            let field = format!("measure[{i}]");
            if m.component == 0 || m.component > n {
                return Err(field_err(
                    format!("{field}.component"),
                    format!("component {} outside 1..={n}", m.component),
                ));
            }
            let (sign, kind) = m.build(d, &field)?;
            let k = m.component - 1;
            measures[k] = std::mem::replace(&mut measures[k], DiffuseMeasure::zero(d, eps)).with_term(sign, kind);
        }
        let problem = Problem::new(domain, measures, nonlinearity).map_err(|e| field_err("problem", e))?;

        let v = &self.verify;
        if v.revuz_paths < 2 || v.martingale_paths < 2 || v.dynkin_paths < 2 {
            return Err(field_err("verify", "path counts must be at least 2"));
        }
        if !(v.revuz_time.is_finite() && v.revuz_time >= 0.0) {
            return Err(field_err("verify.revuz_time", "must be non-negative"));
        }
        if v.martingale_checkpoints.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(field_err("verify.martingale_checkpoints", "times must be positive"));
        }
        if let Some(s) = &v.martingale_start {
            if s.len() != d {
                return Err(field_err("verify.martingale_start", format!("expected {d} coordinates")));
            }
        }
        if !(v.dynkin_radius_fraction > 0.0 && v.dynkin_radius_fraction < 1.0) {
            return Err(field_err("verify.dynkin_radius_fraction", "must lie in (0, 1)"));
        }
        if self.check.samples == 0 || !(self.check.box_radius > 0.0) {
            return Err(field_err("check", "samples and box_radius must be positive"));
        }
        if self.oracle.fd_resolution < 5 || self.oracle.radial_points < 10_000 {
            return Err(field_err("oracle", "fd_resolution >= 5 and radial_points >= 10000 required"));
        }
        Ok(RunConfig {
            problem,
            solver,
            verify: self.verify,
            check: self.check,
            oracle: self.oracle,
            output: self.output.unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

impl RawDomain {
    fn build(&self) -> Result<Domain, ConfigError> {
        let need = |v: &Option<f64>, name: &str| v.ok_or_else(|| field_err(format!("domain.{name}"), "missing"));
        let need_vec =
            |v: &Option<Vec<f64>>, name: &str| v.clone().ok_or_else(|| field_err(format!("domain.{name}"), "missing"));
        let shape = match self.shape.as_str() {
            "ball" => Shape::Ball {
                center: need_vec(&self.center, "center")?,
                radius: need(&self.radius, "radius")?,
            },
            "box" => Shape::Box {
                lo: need_vec(&self.lo, "lo")?,
                hi: need_vec(&self.hi, "hi")?,
            },
            "annulus" => Shape::Annulus {
                center: need_vec(&self.center, "center")?,
                r_in: need(&self.r_in, "r_in")?,
                r_out: need(&self.r_out, "r_out")?,
            },
            other => return Err(field_err("domain.shape", format!("unknown shape \"{other}\" (ball, box, annulus)"))),
        };
        Domain::new(shape).map_err(|e| field_err("domain", e))
    }
}

impl RawMeasure {
    fn build(&self, d: usize, field: &str) -> Result<(Sign, MeasureKind), ConfigError> {
        let sign = match self.sign {
            1 => Sign::Plus,
            -1 => Sign::Minus,
            s => return Err(field_err(format!("{field}.sign"), format!("must be +1 or -1, got {s}"))),
        };
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| field_err(format!("{field}.{name}"), "missing"));
        let need_vec = |v: &Option<Vec<f64>>, name: &str| {
            v.clone().ok_or_else(|| field_err(format!("{field}.{name}"), "missing"))
        };
        let kind = match self.kind.as_str() {
            "density" => {
                let src = self
                    .expr
                    .as_deref()
                    .ok_or_else(|| field_err(format!("{field}.expr"), "missing"))?;
                let e = Expr::parse(src, Scope::spatial(d)).map_err(|e| field_err(format!("{field}.expr"), e))?;
                MeasureKind::Density(e)
            }
            "sphere_surface" => MeasureKind::SphereSurface {
                center: need_vec(&self.center, "center")?,
                radius: need(self.radius, "radius")?,
                mass: need(self.mass, "mass")?,
            },
            "box_face" => {
                let axis = self.axis.ok_or_else(|| field_err(format!("{field}.axis"), "missing"))?;
                if axis == 0 || axis > d {
                    return Err(field_err(format!("{field}.axis"), format!("axis {axis} outside 1..={d}")));
                }
                MeasureKind::BoxFaceSurface {
                    axis: axis - 1,
                    offset: need(self.offset, "offset")?,
                    lo: need_vec(&self.lo, "lo")?,
                    hi: need_vec(&self.hi, "hi")?,
                    mass: need(self.mass, "mass")?,
                }
            }
            other => {
                return Err(field_err(
                    format!("{field}.kind"),
                    format!("unknown measure kind \"{other}\" (density, sphere_surface, box_face)"),
                ))
            }
        };
        Ok((sign, kind))
    }
}

/// Accepts the names printed by the checker as well as primed spellings.
pub fn parse_condition(name: &str, alpha: Option<f64>) -> Result<Condition, String> {
    match name {
        "A4" => Ok(Condition::A4),
        "A4prime" | "A4'" => Ok(Condition::A4Prime),
        "A4doubleprime" | "A4''" => Ok(Condition::A4DoublePrime),
        "A5" => alpha.map(Condition::A5).ok_or_else(|| "A5 needs nonlinearity.alpha".to_string()),
        other => {
            if let Some(a) = other.strip_prefix("A5(").and_then(|s| s.strip_suffix(')')) {
                return a.trim().parse().map(Condition::A5).map_err(|_| format!("bad rate in \"{other}\""));
            }
            Err(format!("unknown condition \"{other}\" (A4, A4prime, A4doubleprime, A5)"))
        }
    }
}

impl RawNonlinearity {
    fn build(&self, d: usize, from_measures: usize) -> Result<Nonlinearity, ConfigError> {
        let exprs = |scope: Scope| -> Result<Vec<Expr>, ConfigError> {
            let list = self
                .exprs
                .as_ref()
                .ok_or_else(|| field_err("nonlinearity.exprs", "missing"))?;
            list.iter()
                .enumerate()
                .map(|(i, s)| Expr::parse(s, scope).map_err(|e| field_err(format!("nonlinearity.exprs[{i}]"), e)))
                .collect()
        };
        let n_default = self.components.unwrap_or(from_measures);
        let (n, kind, defaults) = match self.kind.as_str() {
            "zero" => (n_default, NonlinearityKind::Zero, vec![]),
            "linear_decay" => {
                let a = self.alpha.ok_or_else(|| field_err("nonlinearity.alpha", "missing"))?;
                let all = vec![Condition::A4, Condition::A4Prime, Condition::A4DoublePrime, Condition::A5(a)];
                (n_default, NonlinearityKind::LinearDecay(a), all)
            }
            "rotation" => (2, NonlinearityKind::Rotation, vec![Condition::A4]),
            "cubic_decay" => (n_default, NonlinearityKind::CubicDecay, vec![Condition::A4]),
            "componentwise" => {
                let e = exprs(Scope::componentwise(d))?;
                (e.len(), NonlinearityKind::Componentwise(e), vec![])
            }
            "expression" => {
                let len = self.exprs.as_ref().map_or(0, Vec::len);
                let e = exprs(Scope::system(d, len))?;
                (e.len(), NonlinearityKind::ExpressionVector(e), vec![])
            }
            other => {
                return Err(field_err(
                    "nonlinearity.kind",
                    format!("unknown nonlinearity kind \"{other}\" (zero, linear_decay, rotation, cubic_decay, componentwise, expression)"),
                ))
            }
        };
        if let Some(c) = self.components {
            if c != n {
                return Err(field_err("nonlinearity.components", format!("{c} given but the kind has {n}")));
            }
        }
        let declared = match &self.declared {
            Some(names) => names
                .iter()
                .map(|s| parse_condition(s, self.alpha))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| field_err("nonlinearity.declared", e))?,
            None => defaults,
        };
        Nonlinearity::new(n, kind, declared).map_err(|e| field_err("nonlinearity", e))
    }
}

impl RawSolver {
    fn build(&self, seed: u64) -> Result<SolverConfig, ConfigError> {
        let base = SolverConfig::default();
        let step = self.step.unwrap_or(base.step);
        if !(step.is_finite() && step > 0.0) {
            return Err(field_err("solver.step", "must be positive"));
        }
        if let Some(t) = self.tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(field_err("solver.tol", "must be positive"));
            }
        }
        Ok(SolverConfig {
            grid_resolution: self.grid_resolution.unwrap_or(base.grid_resolution),
            paths_per_node: self.paths_per_node.unwrap_or(base.paths_per_node),
            step,
            max_sweeps: self.max_sweeps.unwrap_or(base.max_sweeps),
            tol: self.tol,
            damping: self.damping.unwrap_or(base.damping),
            truncation_base: self.truncation_base.unwrap_or(base.truncation_base),
            seed,
            max_steps: self.max_steps,
            // barrier violations become a reported verdict instead of an abort
            fail_on_barrier_violation: false,
            ..base
        })
    }
}
