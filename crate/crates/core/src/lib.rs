//! Monte Carlo solver for semilinear elliptic systems with diffuse measure
//! data, built on killed Brownian motion.

pub mod expr;
pub mod field;
pub mod geometry;
pub mod measure;
pub mod nonlinearity;
pub mod oracles;
pub mod path;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod stats;
