//! Composite adaptive control barrier function safety filters with a
//! closed-loop simulation harness.
//!
//! The crate builds safety-filtered controllers for control-affine systems
//! with parametric model uncertainty: a CLF-CBF quadratic program mediates
//! between a nominal controller and barrier constraints, while an online
//! parameter estimator tightens the filter as data accrues. A robust
//! worst-case filter over the same parameter set serves as the comparison
//! baseline. Everything is generic over the scalar type; `f64` aliases are
//! exported at the crate root.

pub mod adaptation;
pub mod cli;
pub mod controller;
pub mod error;
pub mod model;
pub mod num;
pub mod qp;
pub mod metrics;
pub mod scenarios;
pub mod simulator;
pub mod verify;

pub use cli::run_cli;
pub use error::{Error, Result};
pub use num::Real;

/// Control-affine system with uncertain parameters, `f64` scalars.
pub type AffineSystem64 = model::AffineSystem<f64>;
/// Barrier function specification, `f64` scalars.
pub type BarrierSpec64 = model::BarrierSpec<f64>;
/// Lyapunov function specification, `f64` scalars.
pub type LyapunovSpec64 = model::LyapunovSpec<f64>;
/// Quadratic program, `f64` scalars.
pub type QpProblem64 = qp::QpProblem<f64>;
/// Quadratic program solution, `f64` scalars.
pub type QpSolution64 = qp::QpSolution<f64>;
