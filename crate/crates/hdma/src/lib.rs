//! High-dimensional model averaging via J-fold cross-validation.
//!
//! The pipeline: rank covariates with an initial penalized fit, build a
//! nested + non-nested candidate model set, fit every candidate on the full
//! data and on each fold complement, pick simplex weights by minimizing the
//! cross-validation criterion with an accelerated projected-gradient solver,
//! and optionally run post-averaging debiased inference with multiplier
//! bootstrap simultaneous confidence intervals.

pub mod candidates;
pub mod data;
pub mod error;
pub mod inference;
pub mod loss;
pub mod pipeline;
pub mod sim;
pub mod solver;
pub mod weights;

pub use error::{HdmaError, Result};
