//! Dyadic nonlinear potentials on cube lattices: the q-potential and
//! fractional maximal operators, level-set decompositions, weak
//! A-infinity weights, and an empirical harness for good-lambda /
//! good-tau / exponential-integrability inequalities, plus the exact
//! sharpness construction showing the exponential decay rate is best
//! possible.

pub mod config;
pub mod error;
pub mod goodlambda;
pub mod grid;
pub mod potential;
pub mod rng;
pub mod sharpness;
pub mod weight;
pub mod whitney;

pub use error::{Error, Result};
pub use grid::{Cell, CellSet, DyadicCube, Grid, MeasureTree};
pub use potential::{Field, FieldOp, PotentialParams};
