//! Interventional density estimation from observational data.
//!
//! The main estimator is two-stage: a hypernetwork-conditioned spline flow
//! fits the nuisance functions (propensity score and conditional outcome
//! density), then one unconditional flow per treatment arm is fitted to a
//! bias-corrected cross-entropy objective. Baselines, synthetic generators
//! with analytic oracles, and evaluation metrics live alongside.

// `!(x > 0.0)` checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod conditional;
pub mod data;
pub mod error;
pub mod flow;
pub mod hypernet;
pub mod metrics;
pub mod nuisance;
pub mod numeric;
pub mod target;
pub mod train;

pub use error::{CoreError, Result};
