//! Space-mean stochastic reaction-diffusion equations with Lévy noise: grids
//! and ball averages, finite-difference operators, forward simulation, the
//! adjoint backward equation and maximum-principle harvesting control.

#![allow(clippy::needless_range_loop)]

pub mod backward;
pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod operators;
pub mod spacemean;

pub use error::{Error, Result};
pub use grid::{DomainSpec, Field, Grid, TimeField, TimeGrid};
pub use operators::{EllipticOperator, OperatorCoefficients, Poly2};
pub use spacemean::{BallKernel, DualMode};
