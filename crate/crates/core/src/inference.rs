//! Post-detection inference: Riesz representers on the restricted sieve
//! space, HAC estimation of the sd-norm, pointwise confidence intervals,
//! and the joint covariance of several targets.
//!
//! For a detected linear set J the restricted space has basis
//! Psi^0 = (psi_{j,1} for j in J, full Psi_j for j outside J). The
//! representer of a target functional (a slope beta_j or an evaluation
//! f_j(z0)) is v*(z) = c' V_NT^{-1} Psi^0(z); its sampling variance is
//! estimated by a within-individual HAC sum over representer values and
//! demeaned residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{block_transform, eval_basis, BasisEval, BasisSpec};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::panel::within_demean;
use crate::solve::PsdSolver;

/// Column layout of one regressor inside the restricted design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColRef {
    /// Detected linear: a single psi_{j,1} column.
    Linear(usize),
    /// Still nonparametric: the full Psi_j block.
    Block { start: usize, len: usize },
}

/// The restricted design Psi^0 for a detected linear set.
#[derive(Debug, Clone)]
pub struct RestrictedBasis {
    pub n: usize,
    pub t: usize,
    pub j_lin: Vec<usize>,
    pub cols: usize,
    /// Raw Psi^0 values in localized block coordinates, NT x cols, rows
    /// individual-major.
    pub b0: DMatrix<f64>,
    /// Per-regressor column bookkeeping, indexed by j.
    pub col_refs: Vec<ColRef>,
    pub specs: Vec<BasisSpec>,
    /// Per-regressor nonlinear-block coordinate changes (identity head
    /// for psi_1 handled separately).
    transforms: Vec<DMatrix<f64>>,
}

/// Assemble the restricted design: one psi_1 column per detected-linear
/// regressor (ascending), then the full basis block of every remaining
/// regressor (ascending).
pub fn build_restricted(design: &BasisEval, j_lin: &[usize]) -> Result<RestrictedBasis> {
    let p = design.p();
    let mut j_lin: Vec<usize> = j_lin.to_vec();
    j_lin.sort_unstable();
    j_lin.dedup();
    if j_lin.iter().any(|&j| j >= p) {
        return Err(Error::ShapeMismatch(format!(
            "linear set contains index out of range (p = {p})"
        )));
    }
    let nt = design.nt();
    let mut col_refs: Vec<Option<ColRef>> = vec![None; p];
    let mut cols = 0;
    for &j in &j_lin {
        col_refs[j] = Some(ColRef::Linear(cols));
        cols += 1;
    }
    for j in 0..p {
        if !j_lin.contains(&j) {
            let len = design.specs[j].total_dim();
            col_refs[j] = Some(ColRef::Block { start: cols, len });
            cols += len;
        }
    }
    let transforms: Vec<DMatrix<f64>> = design.specs.iter().map(block_transform).collect();
    let mut b0 = DMatrix::zeros(nt, cols);
    for j in 0..p {
        match col_refs[j].as_ref().unwrap() {
            ColRef::Linear(c) => {
                for r in 0..nt {
                    b0[(r, *c)] = design.b_minus[(r, j)];
                }
            }
            ColRef::Block { start, len } => {
                for r in 0..nt {
                    b0[(r, *start)] = design.b_minus[(r, j)];
                    for k in 1..*len {
                        b0[(r, start + k)] = design.b_nl[j][(r, k - 1)];
                    }
                }
                // Localize the nonlinear sub-block (psi_1 column stays).
                let sub = *len - 1;
                if sub > 0 {
                    let local = b0.columns(start + 1, sub) * &transforms[j];
                    b0.columns_mut(start + 1, sub).copy_from(&local);
                }
            }
        }
    }
    Ok(RestrictedBasis {
        n: design.n,
        t: design.t,
        j_lin,
        cols,
        b0,
        col_refs: col_refs.into_iter().map(Option::unwrap).collect(),
        specs: design.specs.clone(),
        transforms,
    })
}

/// V_NT = (1/NT) sum_it of demeaned Psi^0 outer products, computed as
/// the Gram of the demeaned design.
pub fn build_v_nt(rb: &RestrictedBasis) -> DMatrix<f64> {
    let (n, t) = (rb.n, rb.t);
    let mut x = rb.b0.clone();
    for i in 0..n {
        for c in 0..rb.cols {
            let mean: f64 = (0..t).map(|s| x[(i * t + s, c)]).sum::<f64>() / t as f64;
            for s in 0..t {
                x[(i * t + s, c)] -= mean;
            }
        }
    }
    x.transpose() * &x / (n * t) as f64
}

/// Stabilized factorization of V_NT; fails with `SingularVnt` if no
/// usable eigen-direction remains.
pub fn factor_v_nt(v_nt: &DMatrix<f64>) -> Result<PsdSolver> {
    PsdSolver::new(v_nt).map_err(|_| Error::SingularVnt)
}

/// The target vector c*_j: a unit vector for detected-linear j, the
/// stacked Psi_j(z0) for nonparametric j (which requires z0 in [0,1]).
pub fn target_vector(rb: &RestrictedBasis, j: usize, z0: Option<f64>) -> Result<DVector<f64>> {
    let mut c = DVector::zeros(rb.cols);
    match &rb.col_refs[j] {
        ColRef::Linear(col) => {
            c[*col] = 1.0;
        }
        ColRef::Block { start, len } => {
            let z0 = z0.ok_or(Error::MissingEvaluationPoint(j))?;
            if !(0.0..=1.0).contains(&z0) {
                return Err(Error::InvalidPoint(z0));
            }
            let vals = eval_basis(&rb.specs[j], z0);
            debug_assert_eq!(vals.len(), *len);
            c[*start] = vals[0];
            // Nonlinear entries map through the block coordinate change:
            // f_j(z0) = Psi(z0)' T u_local, so c_local = T' Psi(z0).
            let sub = *len - 1;
            if sub > 0 {
                let tail = DVector::from_column_slice(&vals[1..]);
                let local = rb.transforms[j].transpose() * tail;
                for k in 0..sub {
                    c[start + 1 + k] = local[k];
                }
            }
        }
    }
    Ok(c)
}

/// Riesz representer of the target (j, z0): returns (c*_j, V_NT^{-1} c*_j).
pub fn riesz_representer(
    rb: &RestrictedBasis,
    v_nt: &PsdSolver,
    j: usize,
    z0: Option<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let c = target_vector(rb, j, z0)?;
    let coef = v_nt.solve(&c);
    Ok((c, coef))
}

/// Per-individual demeaned residuals: eps_i = H (Y_i - fhat_i), N x T.
pub fn residuals(design: &BasisEval, y: &DMatrix<f64>, fit: &FitResult) -> DMatrix<f64> {
    let fitted = fit.fitted_values(design);
    let t = design.t;
    let raw = DMatrix::from_fn(design.n, t, |i, s| y[(i, s)] - fitted[i * t + s]);
    within_demean(&raw)
}

/// HAC kernel for the sd-norm estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HacKernel {
    Bartlett,
    Truncated,
}

impl std::str::FromStr for HacKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bartlett" => Ok(HacKernel::Bartlett),
            "truncated" => Ok(HacKernel::Truncated),
            other => Err(Error::InvalidConfig(format!("unknown kernel `{other}`"))),
        }
    }
}

impl std::fmt::Display for HacKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HacKernel::Bartlett => write!(f, "bartlett"),
            HacKernel::Truncated => write!(f, "truncated"),
        }
    }
}

/// Lag weights k_{T,1}, ..., k_{T,l_T}.
pub fn kernel_weights(kernel: HacKernel, l_t: usize) -> Vec<f64> {
    (1..=l_t)
        .map(|j| match kernel {
            HacKernel::Bartlett => 1.0 - j as f64 / (l_t as f64 + 1.0),
            HacKernel::Truncated => 1.0,
        })
        .collect()
}

/// Default window l_T = min(T - 1, ceil(T^{1/3})).
pub fn default_hac_window(t: usize) -> usize {
    ((t as f64).powf(1.0 / 3.0).ceil() as usize).min(t - 1)
}

/// HAC estimate of <u, v>_sd: (1/N) sum_i [S_i0 + 2 sum_{l<=l_T} k_l S_il]
/// with S_il = (1/T) sum_{t>l} u(Z_it) v(Z_i,t-l) eps_it eps_i,t-l.
pub fn hac_sd_inner(
    u_vals: &DMatrix<f64>,
    v_vals: &DMatrix<f64>,
    resid: &DMatrix<f64>,
    l_t: usize,
    weights: &[f64],
) -> Result<f64> {
    let (n, t) = (resid.nrows(), resid.ncols());
    if u_vals.shape() != (n, t) || v_vals.shape() != (n, t) {
        return Err(Error::ShapeMismatch("hac_sd_inner value arrays".into()));
    }
    if l_t >= t {
        return Err(Error::WindowTooLarge { l_t, t });
    }
    if weights.len() < l_t {
        return Err(Error::ShapeMismatch(format!(
            "{} kernel weights for window {l_t}",
            weights.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut s_i = 0.0;
        for lag in 0..=l_t {
            let mut s_il = 0.0;
            for s in lag..t {
                s_il += u_vals[(i, s)]
                    * v_vals[(i, s - lag)]
                    * resid[(i, s)]
                    * resid[(i, s - lag)];
            }
            s_il /= t as f64;
            s_i += if lag == 0 { s_il } else { 2.0 * weights[lag - 1] * s_il };
        }
        total += s_i;
    }
    Ok(total / n as f64)
}

/// One confidence-interval row of a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiRow {
    /// Regressor index (0-based).
    pub j: usize,
    /// Evaluation point on the unit interval; `None` for a slope target.
    pub z0: Option<f64>,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    /// True when the CI collapses to a point (linear target at z0 = 1/2).
    pub degenerate: bool,
}

/// Inference report: per-target estimates, standard errors, interval
/// bounds, and the joint covariance of the scaled estimators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceReport {
    pub level: f64,
    pub multiplier: f64,
    pub linear_set: Vec<usize>,
    pub lambda_inf: Option<f64>,
    pub l_t: usize,
    pub kernel: String,
    pub targets: Vec<CiRow>,
    /// Estimated covariance of the sqrt(NT)-scaled target estimators.
    pub sigma: Vec<Vec<f64>>,
}

/// Everything needed to produce confidence intervals from a restricted
/// (post-detection, unpenalized) refit.
pub struct InferenceEngine<'a> {
    fit: &'a FitResult,
    rb: RestrictedBasis,
    v_nt_factor: PsdSolver,
    resid: DMatrix<f64>,
    l_t: usize,
    kernel: HacKernel,
    weights: Vec<f64>,
}

impl<'a> InferenceEngine<'a> {
    /// `fit` must be the unpenalized refit restricted to `j_lin` on the
    /// same design and response.
    pub fn new(
        design: &'a BasisEval,
        y: &DMatrix<f64>,
        fit: &'a FitResult,
        j_lin: &[usize],
        l_t: usize,
        kernel: HacKernel,
    ) -> Result<Self> {
        if l_t >= design.t {
            return Err(Error::WindowTooLarge { l_t, t: design.t });
        }
        let rb = build_restricted(design, j_lin)?;
        let v_nt = build_v_nt(&rb);
        let v_nt_factor = factor_v_nt(&v_nt)?;
        let resid = residuals(design, y, fit);
        let weights = kernel_weights(kernel, l_t);
        Ok(Self {
            fit,
            rb,
            v_nt_factor,
            resid,
            l_t,
            kernel,
            weights,
        })
    }

    pub fn restricted_basis(&self) -> &RestrictedBasis {
        &self.rb
    }

    /// Representer values v*(Z_it) arranged N x T.
    fn representer_values(&self, j: usize, z0: Option<f64>) -> Result<DMatrix<f64>> {
        let (_, coef) = riesz_representer(&self.rb, &self.v_nt_factor, j, z0)?;
        let vals = &self.rb.b0 * coef;
        let t = self.rb.t;
        Ok(DMatrix::from_fn(self.rb.n, t, |i, s| vals[i * t + s]))
    }

    /// HAC estimate of ||v*_{j,z0}||^2_sd (clamped at zero).
    pub fn sd_norm_sq(&self, j: usize, z0: Option<f64>) -> Result<f64> {
        let vals = self.representer_values(j, z0)?;
        let raw = hac_sd_inner(&vals, &vals, &self.resid, self.l_t, &self.weights)?;
        Ok(raw.max(0.0))
    }

    /// Point estimate of the target: beta_j for a slope, fhat_j(z0) for
    /// an evaluation.
    pub fn estimate(&self, j: usize, z0: Option<f64>) -> Result<f64> {
        match z0 {
            Some(point) => {
                if !(0.0..=1.0).contains(&point) {
                    return Err(Error::InvalidPoint(point));
                }
                Ok(self.fit.eval_component(&self.rb.specs, j, point))
            }
            None => {
                if !self.rb.j_lin.contains(&j) {
                    return Err(Error::MissingEvaluationPoint(j));
                }
                Ok(self.fit.v[j])
            }
        }
    }

    /// Pointwise confidence interval for one target at the given level.
    ///
    /// Detected-linear j: SE(fhat_j(z0)) = |z0 - 1/2| sigma_j / sqrt(NT)
    /// with sigma_j the sd-norm of the slope representer, so the interval
    /// at z0 = 1/2 degenerates to a point. Nonparametric j:
    /// SE = sigma_j(z0) / sqrt(NT).
    pub fn ci(&self, j: usize, z0: Option<f64>, level: f64) -> Result<CiRow> {
        let mult = normal_quantile(level)?;
        let nt = (self.rb.n * self.rb.t) as f64;
        let estimate = self.estimate(j, z0)?;
        let is_linear = self.rb.j_lin.contains(&j);
        let sigma = self.sd_norm_sq(j, if is_linear { None } else { z0 })?.sqrt();
        let se = match (is_linear, z0) {
            (true, Some(point)) => (point - 0.5).abs() * sigma / nt.sqrt(),
            _ => sigma / nt.sqrt(),
        };
        let half = mult * se;
        Ok(CiRow {
            j,
            z0,
            estimate,
            se,
            lower: estimate - half,
            upper: estimate + half,
            degenerate: se == 0.0,
        })
    }

    /// Joint covariance of the sqrt(NT)-scaled target estimators:
    /// Sigma[a,b] = HAC(v*_a, v*_b) / NT, symmetrized.
    pub fn joint_cov(&self, targets: &[(usize, Option<f64>)]) -> Result<DMatrix<f64>> {
        let nt = (self.rb.n * self.rb.t) as f64;
        let vals: Vec<DMatrix<f64>> = targets
            .iter()
            .map(|&(j, z0)| {
                let z0 = if self.rb.j_lin.contains(&j) { None } else { z0 };
                self.representer_values(j, z0)
            })
            .collect::<Result<_>>()?;
        let k = targets.len();
        let mut sigma = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                sigma[(a, b)] =
                    hac_sd_inner(&vals[a], &vals[b], &self.resid, self.l_t, &self.weights)?
                        / nt;
            }
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        Ok(sym)
    }

    /// Full report over the requested targets.
    pub fn report(
        &self,
        targets: &[(usize, Option<f64>)],
        level: f64,
        lambda_inf: Option<f64>,
    ) -> Result<InferenceReport> {
        let rows: Vec<CiRow> = targets
            .iter()
            .map(|&(j, z0)| self.ci(j, z0, level))
            .collect::<Result<_>>()?;
        let sigma = self.joint_cov(targets)?;
        let sigma_rows: Vec<Vec<f64>> = (0..sigma.nrows())
            .map(|a| (0..sigma.ncols()).map(|b| sigma[(a, b)]).collect())
            .collect();
        Ok(InferenceReport {
            level,
            multiplier: normal_quantile(level)?,
            linear_set: self.rb.j_lin.clone(),
            lambda_inf,
            l_t: self.l_t,
            kernel: self.kernel.to_string(),
            targets: rows,
            sigma: sigma_rows,
        })
    }
}

/// Two-sided normal quantile z_{1 - (1-level)/2}.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must be in (0,1), got {level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}
