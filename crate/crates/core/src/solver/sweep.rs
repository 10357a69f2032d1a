//! One pass of the probabilistic representation over a set of grid nodes.

use rayon::prelude::*;

use crate::field::SolutionField;
use crate::measure::DiffuseMeasure;
use crate::nonlinearity::Nonlinearity;
use crate::path::{PathConfig, Trapezoid, Visit, WalkState, Walker};
use crate::stats::{Estimate, Moments};
use crate::geometry::Domain;

pub(crate) struct Sweep<'a> {
    pub domain: &'a Domain,
    pub nonlinearity: &'a Nonlinearity,
    /// Per component; already restricted to the current nest level.
    pub measures: &'a [DiffuseMeasure],
    /// Current iterate u⁽ᵐ⁾; `None` stands for u ≡ 0.
    pub iterate: Option<&'a SolutionField>,
    /// Truncation level applied to the values of f.
    pub level: f64,
    /// Estimate u's representation (f-term plus A^μ).
    pub solution: bool,
    /// Also accumulate the barrier ∫ d(Σ_k |A^{μᵏ}|) on the same paths.
    pub barrier: bool,
    pub cfg: &'a PathConfig,
    pub paths: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeEstimate {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub barrier: Option<Estimate>,
    pub truncated_paths: usize,
    pub truncation_active: bool,
    pub non_finite: bool,
}

impl Sweep<'_> {
    pub fn run(&self, starts: &[Vec<f64>], stream_offsets: &[u64]) -> Vec<NodeEstimate> {
        starts
            .par_iter()
            .zip(stream_offsets.par_iter())
            .map(|(x, &offset)| self.node(x, offset))
            .collect()
    }

    fn node(&self, start: &[f64], offset: u64) -> NodeEstimate {
        let n = self.measures.len();
        let d = self.domain.dimension();
        let walker = Walker::new(self.domain, self.cfg);
        let with_f = self.solution && !self.nonlinearity.is_zero();
        let with_mu: Vec<bool> = self.measures.iter().map(|m| !m.is_zero()).collect();
        let channels = n + usize::from(self.barrier);
        let mut acc = Trapezoid::new(self.cfg.step, channels);
        let mut state = WalkState::new(d);
        let mut u = vec![0.0; n];
        let mut fval = vec![0.0; n];
        let mut g = vec![0.0; channels];
        let mut out = vec![0.0; channels];
        let mut moments = vec![Moments::new(); channels];
        let mut truncated_paths = 0;
        let mut truncation_active = false;
        let mut non_finite = false;

        for p in 0..self.paths as u64 {
            acc.reset();
            let end = walker.walk(start, offset + p, &mut state, |_, x| {
                g.iter_mut().for_each(|v| *v = 0.0);
                if with_f {
                    if let Some(field) = self.iterate {
                        field.interpolate_into(x, &mut u);
                    }
                    match self.nonlinearity.evaluate_truncated_into(x, &u, self.level, &mut fval) {
                        Some(active) => truncation_active |= active,
                        None => {
                            non_finite = true;
                            fval.iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    g[..n].copy_from_slice(&fval);
                }
                for k in 0..n {
                    if !with_mu[k] {
                        continue;
                    }
                    if self.solution {
                        g[k] += self.measures[k].density_at(x);
                    }
                    if self.barrier {
                        g[n] += self.measures[k].abs_density_at(x);
                    }
                }
                acc.push(&g);
                Visit::Continue
            });
            if matches!(end, crate::path::WalkEnd::Truncated(_)) {
                truncated_paths += 1;
            }
            acc.finish(end, &mut out);
            for (m, v) in moments.iter_mut().zip(&out) {
                m.push(*v);
            }
        }
        let est: Vec<Estimate> = moments.iter().map(Moments::estimate).collect();
        NodeEstimate {
            mean: est[..n].iter().map(|e| e.mean).collect(),
            se: est[..n].iter().map(|e| e.se).collect(),
            barrier: self.barrier.then(|| est[n]),
            truncated_paths,
            truncation_active,
            non_finite,
        }
    }
}
