//! Benchmark-dose estimation with monotone penalised B-splines.
//!
//! [`model::fit`] fits `y = α + f(x) + Σ g_j(z_j) + σε` with `f` strictly
//! decreasing, [`bmd::estimate_bmd`] solves the estimating equation for the
//! benchmark dose, and [`bmdl`] provides Delta, pivot and bootstrap lower
//! limits. [`sim`] runs the coverage and timing study.

pub mod bmd;
pub mod bmdl;
pub mod error;
pub mod model;
pub mod parallel;
pub mod sim;
pub mod splines;
pub mod stats;

pub use error::{BmdError, Result};
