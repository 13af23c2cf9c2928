//! SCAD penalty and the local quadratic approximation weight.
//!
//! The derivative is lambda on [0, lambda], tapers linearly to zero on
//! (lambda, kappa*lambda], and is zero beyond, so large signals escape
//! the penalty entirely while small group norms are driven to exact
//! zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default kappa, the usual SCAD shape constant.
pub const DEFAULT_KAPPA: f64 = 3.7;

/// Relative hard-zero threshold on the nonlinear group norm: blocks with
/// ||f_{j,~}||_NT below this fraction of the response scale are zeroed.
pub const DEFAULT_NORM_THRESHOLD_REL: f64 = 1e-6;

/// SCAD tuning parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScadParams {
    pub lambda: f64,
    pub kappa: f64,
}

impl ScadParams {
    pub fn new(lambda: f64, kappa: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(kappa > 2.0) {
            return Err(Error::InvalidScadParams { lambda, kappa });
        }
        Ok(Self { lambda, kappa })
    }

    /// lambda with the default kappa = 3.7.
    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, DEFAULT_KAPPA)
    }
}

/// First derivative of the SCAD penalty at z >= 0.
pub fn scad_deriv(z: f64, params: &ScadParams) -> Result<f64> {
    if z < 0.0 {
        return Err(Error::NegativeArgument(z));
    }
    let ScadParams { lambda, kappa } = *params;
    if z <= lambda {
        Ok(lambda)
    } else {
        Ok((kappa * lambda - z).max(0.0) / (kappa - 1.0))
    }
}

/// SCAD penalty value at z >= 0: the integral of the derivative from 0.
///
/// Piecewise: lambda*z on [0, lambda]; the quadratic taper on
/// (lambda, kappa*lambda]; the plateau (kappa+1)*lambda^2/2 beyond.
pub fn scad_value(z: f64, params: &ScadParams) -> Result<f64> {
    if z < 0.0 {
        return Err(Error::NegativeArgument(z));
    }
    let ScadParams { lambda, kappa } = *params;
    if z <= lambda {
        Ok(lambda * z)
    } else if z <= kappa * lambda {
        Ok(lambda * lambda
            + (kappa * lambda * (z - lambda) - (z * z - lambda * lambda) / 2.0) / (kappa - 1.0))
    } else {
        Ok((kappa + 1.0) * lambda * lambda / 2.0)
    }
}

/// Outcome of the LQA weight computation for one nonlinear block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LqaWeight {
    /// D_j(u0) = sqrt(NT) p'(sqrt(q/NT)) / sqrt(q); zero once the group
    /// norm clears kappa*lambda.
    Weight(f64),
    /// Group norm at or below the hard-zero threshold; the caller must
    /// zero the block for all subsequent iterations.
    BelowThreshold,
}

/// LQA weight for a block with quadratic form q = u0' B' M_H B u0.
///
/// `norm_threshold` is the absolute cutoff on ||f_{j,~}||_NT =
/// sqrt(q/NT) below which the weight is undefined (D_j diverges) and the
/// block must be hard-zeroed.
pub fn lqa_weight(q: f64, nt: usize, params: &ScadParams, norm_threshold: f64) -> LqaWeight {
    if params.lambda == 0.0 {
        return LqaWeight::Weight(0.0);
    }
    let norm = (q.max(0.0) / nt as f64).sqrt();
    if norm <= norm_threshold {
        return LqaWeight::BelowThreshold;
    }
    if norm > params.kappa * params.lambda {
        return LqaWeight::Weight(0.0);
    }
    // sqrt(NT) p'(norm) / sqrt(q) = p'(norm) / norm
    let deriv = scad_deriv(norm, params).expect("norm >= 0");
    LqaWeight::Weight(deriv / norm)
}
