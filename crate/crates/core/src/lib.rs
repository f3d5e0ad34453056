//! Simulation laboratory for individualized treatment effects on right-censored
//! survival data.
//!
//! The crate is organised around the life of one simulated dataset:
//!
//! * [`dgp`] generates covariates, treatment, counterfactual event times and
//!   censoring for the Henderson, Cui and Hu designs, together with the exact
//!   log-time treatment effect `theta(x)` used as ground truth.
//! * [`propensity`] estimates assignment probabilities with a balance-weighted
//!   ensemble and appends them as an extra covariate.
//! * [`bart`] is the semiparametric accelerated-failure-time sum-of-trees
//!   sampler; [`csf`] is the honest causal survival forest.
//! * [`metrics`] scores both against the truth.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bart;
pub mod csf;
pub mod dgp;
mod error;
pub mod forest;
pub mod matrix;
pub mod metrics;
pub mod propensity;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;
