//! Partially linear additive panel regression with fixed effects.
//!
//! Estimates Y_it = sum_j f_j(Z_itj) + alpha_i + eps_it by penalized
//! sieve least squares on a centralized spline basis, detects which
//! additive components are linear via a group SCAD penalty along a
//! lambda solution path, and builds pointwise and joint confidence
//! intervals from Riesz representers with HAC variance estimates. A
//! Monte Carlo harness reproduces the reference simulation experiments
//! at desk scale.

pub mod basis;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod panel;
pub mod path;
pub mod penalty;
pub mod quad;
pub mod sim;
pub mod solve;
pub mod tuning;

pub use error::{Error, Result};
