//! Output artifacts: the field CSV and the key: value report.

use std::fmt::Write as _;
use std::path::Path;

use semilin::field::{Grid, SolutionField};
use semilin::geometry::Domain;

/// One verification outcome, rendered as
/// `verdict.<name>: PASS|FAIL|INFO statistic=<s> threshold=<t>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    /// None for informational entries that assert nothing.
    pub passed: Option<bool>,
    pub statistic: f64,
    pub threshold: Option<f64>,
}

impl Verdict {
    pub fn check(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: Some(statistic <= threshold),
            statistic,
            threshold: Some(threshold),
        }
    }

    pub fn info(name: impl Into<String>, statistic: f64) -> Self {
        Self {
            name: name.into(),
            passed: None,
            statistic,
            threshold: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }

    fn line(&self) -> String {
        let tag = match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        let threshold = self.threshold.map_or("none".to_string(), |t| format!("{t:e}"));
        format!("verdict.{}: {tag} statistic={:e} threshold={threshold}", self.name, self.statistic)
    }
}

/// Ordered key: value lines.
#[derive(Debug, Default, Clone)]
pub struct Report {
    lines: Vec<(String, String)>,
    verdicts: Vec<Verdict>,
}

impl Report {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn verdict(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    pub fn any_failed(&self) -> bool {
        self.verdicts.iter().any(Verdict::failed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}: {v}");
        }
        for v in &self.verdicts {
            let _ = writeln!(s, "{}", v.line());
        }
        s
    }
}

pub fn join_floats(values: &[f64]) -> String {
    if values.is_empty() {
        return "none".into();
    }
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

/// Header plus one row per interior node; `{}` on f64 prints the shortest
/// string that parses back to the same bits.
pub fn field_csv(u: &SolutionField) -> String {
    let d = u.grid().dimension();
    let n = u.components();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend((1..=n).map(|k| format!("u{k}")));
    header.extend((1..=n).map(|k| format!("se{k}")));
    let mut s = header.join(",");
    s.push('\n');
    for node in u.interior_nodes() {
        let row: Vec<String> = u
            .grid()
            .position(node)
            .iter()
            .chain(u.node_values(node))
            .chain(u.node_se(node))
            .map(|v| v.to_string())
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("solution does not match the configured grid: {0}")]
    GridMismatch(String),
}

/// Reads a CSV written by [`field_csv`] back onto the configured grid.
pub fn read_field_csv(text: &str, domain: &Domain, grid: Grid, components: usize) -> Result<SolutionField, CsvError> {
    let d = domain.dimension();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(CsvError::Malformed {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut expected: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    expected.extend((1..=components).map(|k| format!("u{k}")));
    expected.extend((1..=components).map(|k| format!("se{k}")));
    if cols != expected {
        return Err(CsvError::GridMismatch(format!("header {cols:?}, expected {expected:?}")));
    }
    let mut u = SolutionField::zeros(domain, grid, components);
    let interior = u.interior_nodes();
    let tol: f64 = 1e-9 * u.grid().spacing().iter().copied().fold(0.0, f64::max);
    let mut count = 0;
    for (i, line) in lines {
        let nums: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CsvError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        if nums.len() != d + 2 * components {
            return Err(CsvError::Malformed {
                line: i + 1,
                message: format!("{} columns, expected {}", nums.len(), d + 2 * components),
            });
        }
        let Some(&node) = interior.get(count) else {
            return Err(CsvError::GridMismatch(format!("more than {} rows", interior.len())));
        };
        let pos = u.grid().position(node);
        if pos.iter().zip(&nums[..d]).any(|(a, b)| (a - b).abs() > tol) {
            return Err(CsvError::GridMismatch(format!(
                "row {} at {:?}, expected node {pos:?}",
                count + 1,
                &nums[..d]
            )));
        }
        u.set_node(node, &nums[d..d + components], &nums[d + components..]);
        count += 1;
    }
    if count != interior.len() {
        return Err(CsvError::GridMismatch(format!("{count} rows for {} interior nodes", interior.len())));
    }
    Ok(u)
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)
}
