//! Partially identified treatment effects away from the cutoff in sharp
//! regression-discontinuity designs.
//!
//! The library estimates bounds on extrapolated treatment effects under
//! user-selected bounded-variation restrictions with a sensitivity parameter
//! kappa, for single-cutoff designs (Lipschitz, bounded second derivative,
//! bounded KS deviation from conditional independence) and two-cutoff designs
//! (bounded absolute/relative magnitude, smoothness, bounded polynomial
//! expansion, and intersection bounds on the cross-subpopulation bias).
//! It also ships parallel-trend falsification tests and a reference
//! simulation design with analytic oracles.

pub mod data;
pub mod error;
pub mod falsify;
pub mod interval;
pub mod multicut;
pub mod regress;
pub mod simgen;
pub mod singlecut;

pub use error::{Error, Result};
pub use interval::{bounds_intersect, IdentifiedInterval};
