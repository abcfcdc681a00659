//! Cross-fitted double machine learning for the partially linear model, with
//! the score condition number κ as a reliability diagnostic and a Monte Carlo
//! harness for studying it.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dgp;
pub mod diagnose;
pub mod dml;
pub mod error;
pub mod io;
pub mod learners;
pub mod montecarlo;
pub mod report;
pub mod stats;
pub mod stochastics;

pub use error::{Error, Result};
