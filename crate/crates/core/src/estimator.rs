//! Penalized and non-penalized estimation of the additive panel model.
//!
//! Everything happens after the within transform: with demeaned design
//! X = M_H [B_- | B_{1,~} | ... | B_{p,~}] and demeaned response, the
//! objective is
//!
//!   l_NT(v, u) = ||y - X theta||^2 / NT + sum_j p_lambda(||f_{j,~}||_NT),
//!
//! where ||f_{j,~}||_NT^2 = u_j' B_{j,~}' M_H B_{j,~} u_j / NT. The LQA
//! solver replaces each penalty term by its tangent quadratic in the
//! squared group norm, which majorizes the SCAD penalty, so every
//! iteration is one joint ridge-type solve and the objective never
//! increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{block_transform, eval_nonlinear, psi_poly, BasisEval, BasisSpec};
use crate::error::{Error, Result};
use crate::penalty::{
    lqa_weight, scad_value, LqaWeight, ScadParams, DEFAULT_NORM_THRESHOLD_REL,
};
use crate::solve::{PsdSolver, RCOND};

/// Per-individual demeaned cross moment: zeta_i(g, f) =
/// (1/T) sum_t (g_it - mean_t g)(f_it - mean_t f).
pub fn zeta_i(g: &DMatrix<f64>, f: &DMatrix<f64>, i: usize) -> f64 {
    let t = g.ncols() as f64;
    let gm = g.row(i).sum() / t;
    let fm = f.row(i).sum() / t;
    (0..g.ncols())
        .map(|s| (g[(i, s)] - gm) * (f[(i, s)] - fm))
        .sum::<f64>()
        / t
}

/// Empirical inner product <g, f>_NT = (1/N) sum_i zeta_i(g, f) on N x T
/// value arrays.
pub fn nt_inner(g: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<f64> {
    if g.shape() != f.shape() {
        return Err(Error::ShapeMismatch(format!(
            "nt_inner: {:?} vs {:?}",
            g.shape(),
            f.shape()
        )));
    }
    let n = g.nrows();
    Ok((0..n).map(|i| zeta_i(g, f, i)).sum::<f64>() / n as f64)
}

/// ||g||_NT^2 = <g, g>_NT.
pub fn nt_norm_sq(g: &DMatrix<f64>) -> f64 {
    nt_inner(g, g).expect("same shape")
}

/// Result of a single fit at one lambda.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Linear coefficients, one per psi_{j,1}.
    pub v: Vec<f64>,
    /// Nonlinear coefficient blocks, length M_j + r_j - 2 each.
    pub u: Vec<Vec<f64>>,
    /// Indices j whose nonlinear block is exactly zero.
    pub linear_set: Vec<usize>,
    /// Group norms ||f_{j,~}||_NT at the solution.
    pub group_norms: Vec<f64>,
    pub lambda: f64,
    /// l_NT evaluated after each LQA solve.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
}

impl FitResult {
    /// Fitted component function f_j at a point on the unit interval:
    /// v_j psi_1(w) + u_j' Psi_{j,~}(w).
    pub fn eval_component(&self, specs: &[BasisSpec], j: usize, w: f64) -> f64 {
        let mut val = self.v[j] * psi_poly(1, w);
        if !self.u[j].is_empty() {
            for (c, b) in eval_nonlinear(&specs[j], w).into_iter().enumerate() {
                val += self.u[j][c] * b;
            }
        }
        val
    }

    /// Fitted values f_hat(Z_it) for every sample row of a design.
    pub fn fitted_values(&self, design: &BasisEval) -> DVector<f64> {
        let nt = design.nt();
        let mut out = DVector::zeros(nt);
        for j in 0..design.p() {
            out += design.b_minus.column(j) * self.v[j];
            if !self.u[j].is_empty() {
                let uj = DVector::from_column_slice(&self.u[j]);
                out += &design.b_nl[j] * uj;
            }
        }
        out
    }
}

fn recompute_linear_set(u: &[Vec<f64>]) -> Vec<usize> {
    u.iter()
        .enumerate()
        .filter(|(_, uj)| uj.iter().all(|&x| x == 0.0))
        .map(|(j, _)| j)
        .collect()
}

/// Demeaned, stacked design with its Gram matrix, shared by every solve
/// on the same data.
#[derive(Debug, Clone)]
pub(crate) struct WorkingDesign {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    /// Nonlinear block widths per regressor.
    pub dims: Vec<usize>,
    /// Column offset of block j inside `x` (blocks start after the p
    /// linear columns).
    pub offsets: Vec<usize>,
    pub total_cols: usize,
    /// Demeaned [B_- | blocks] in localized block coordinates, rows
    /// ordered individual-major.
    pub x: DMatrix<f64>,
    /// Demeaned response.
    pub y: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub y_norm_sq: f64,
    /// Per-block change of coordinates: original coefficients are
    /// `transform * local`.
    pub transforms: Vec<DMatrix<f64>>,
    inv_transforms: Vec<DMatrix<f64>>,
}

impl WorkingDesign {
    /// Assemble from a design and an N x T response, optionally keeping
    /// only the listed individuals (for cross-validation folds).
    pub fn assemble(
        design: &BasisEval,
        y: &DMatrix<f64>,
        individuals: Option<&[usize]>,
    ) -> Result<Self> {
        if y.nrows() != design.n || y.ncols() != design.t {
            return Err(Error::ShapeMismatch(format!(
                "response is {}x{}, design built for {}x{}",
                y.nrows(),
                y.ncols(),
                design.n,
                design.t
            )));
        }
        let all: Vec<usize>;
        let idx: &[usize] = match individuals {
            Some(list) => list,
            None => {
                all = (0..design.n).collect();
                &all
            }
        };
        let n = idx.len();
        let t = design.t;
        let nt = n * t;
        let p = design.p();
        let dims: Vec<usize> = design.specs.iter().map(|s| s.nonlinear_dim()).collect();
        let mut offsets = Vec::with_capacity(p);
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        let total_cols = p + acc;

        let transforms: Vec<DMatrix<f64>> =
            design.specs.iter().map(block_transform).collect();
        let inv_transforms: Vec<DMatrix<f64>> = transforms
            .iter()
            .map(|t_mat| {
                if t_mat.nrows() == 0 {
                    t_mat.clone()
                } else {
                    t_mat
                        .clone()
                        .lu()
                        .try_inverse()
                        .expect("block transform is triangular with nonzero diagonal")
                }
            })
            .collect();

        let mut x = DMatrix::zeros(nt, total_cols);
        let mut yv = DVector::zeros(nt);
        for (row_i, &i) in idx.iter().enumerate() {
            for s in 0..t {
                let src = i * t + s;
                let dst = row_i * t + s;
                for j in 0..p {
                    x[(dst, j)] = design.b_minus[(src, j)];
                }
                for j in 0..p {
                    for c in 0..dims[j] {
                        x[(dst, p + offsets[j] + c)] = design.b_nl[j][(src, c)];
                    }
                }
                yv[dst] = y[(i, s)];
            }
        }
        // Localize each nonlinear block: columns become B * T_j.
        for j in 0..p {
            if dims[j] > 0 {
                let range = p + offsets[j]..p + offsets[j] + dims[j];
                let local = x.columns(range.start, dims[j]) * &transforms[j];
                x.columns_mut(range.start, dims[j]).copy_from(&local);
            }
        }
        // Within transform: demean each individual's T consecutive rows.
        for block in 0..n {
            let r0 = block * t;
            for c in 0..total_cols {
                let mean: f64 = (0..t).map(|s| x[(r0 + s, c)]).sum::<f64>() / t as f64;
                for s in 0..t {
                    x[(r0 + s, c)] -= mean;
                }
            }
            let mean: f64 = (0..t).map(|s| yv[r0 + s]).sum::<f64>() / t as f64;
            for s in 0..t {
                yv[r0 + s] -= mean;
            }
        }
        let gram = x.transpose() * &x;
        let xty = x.transpose() * &yv;
        let y_norm_sq = yv.dot(&yv);
        Ok(Self {
            n,
            t,
            p,
            dims,
            offsets,
            total_cols,
            x,
            y: yv,
            gram,
            xty,
            y_norm_sq,
            transforms,
            inv_transforms,
        })
    }

    /// Original-coordinate block coefficients from the local solution.
    fn block_to_original(&self, j: usize, local: &[f64]) -> Vec<f64> {
        if local.is_empty() {
            return Vec::new();
        }
        let v = &self.transforms[j] * DVector::from_column_slice(local);
        v.iter().cloned().collect()
    }

    /// Local-coordinate block coefficients from original ones.
    fn block_to_local(&self, j: usize, orig: &[f64]) -> Vec<f64> {
        if orig.is_empty() {
            return Vec::new();
        }
        let v = &self.inv_transforms[j] * DVector::from_column_slice(orig);
        v.iter().cloned().collect()
    }

    pub fn nt(&self) -> usize {
        self.n * self.t
    }

    /// Columns of block j inside the stacked design.
    fn block_cols(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.p + self.offsets[j];
        start..start + self.dims[j]
    }

    /// q_j = u_j' G_j u_j with G_j = B_{j,~}' M_H B_{j,~}.
    fn block_quad_form(&self, j: usize, theta: &DVector<f64>) -> f64 {
        let cols = self.block_cols(j);
        let mut q = 0.0;
        for (ri, r) in cols.clone().enumerate() {
            for (ci, c) in cols.clone().enumerate() {
                let _ = (ri, ci);
                q += theta[r] * self.gram[(r, c)] * theta[c];
            }
        }
        q
    }

    /// ||f_{j,~}||_NT at theta.
    fn block_norm(&self, j: usize, theta: &DVector<f64>) -> f64 {
        (self.block_quad_form(j, theta).max(0.0) / self.nt() as f64).sqrt()
    }

    /// l_NT at theta: residual fidelity plus SCAD penalties.
    fn objective_at(&self, theta: &DVector<f64>, params: &ScadParams) -> f64 {
        let nt = self.nt() as f64;
        let resid = &self.y - &self.x * theta;
        let mut val = resid.dot(&resid) / nt;
        for j in 0..self.p {
            if self.dims[j] > 0 {
                let norm = self.block_norm(j, theta);
                val += scad_value(norm, params).expect("norm >= 0");
            }
        }
        val
    }
}

/// Solve the joint ridge subproblem over the active blocks:
/// (X'X + blockdiag(0_p, w_j G_j)) theta = X'y restricted to active
/// columns. Inactive blocks stay exactly zero.
fn solve_weighted(
    ws: &WorkingDesign,
    active: &[bool],
    weights: &[f64],
    rcond: f64,
) -> Result<DVector<f64>> {
    let mut cols: Vec<usize> = (0..ws.p).collect();
    for j in 0..ws.p {
        if active[j] {
            cols.extend(ws.block_cols(j));
        }
    }
    let k = cols.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for (ri, &r) in cols.iter().enumerate() {
        b[ri] = ws.xty[r];
        for (ci, &c) in cols.iter().enumerate() {
            a[(ri, ci)] = ws.gram[(r, c)];
        }
    }
    // Add w_j G_j on each active block diagonal; G_j is the matching
    // diagonal block of the Gram itself.
    let mut pos = ws.p;
    for j in 0..ws.p {
        if active[j] {
            let d = ws.dims[j];
            if weights[j] != 0.0 {
                for r in 0..d {
                    for c in 0..d {
                        let g = ws.gram[(ws.p + ws.offsets[j] + r, ws.p + ws.offsets[j] + c)];
                        a[(pos + r, pos + c)] += weights[j] * g;
                    }
                }
            }
            pos += d;
        }
    }
    let sol = PsdSolver::with_rcond(&a, rcond)?.solve(&b);
    let mut theta = DVector::zeros(ws.total_cols);
    for (ri, &r) in cols.iter().enumerate() {
        theta[r] = sol[ri];
    }
    Ok(theta)
}

fn theta_to_fit(
    ws: &WorkingDesign,
    theta: &DVector<f64>,
    lambda: f64,
    trace: Vec<f64>,
    converged: bool,
    n_iter: usize,
) -> FitResult {
    let v: Vec<f64> = (0..ws.p).map(|j| theta[j]).collect();
    let u: Vec<Vec<f64>> = (0..ws.p)
        .map(|j| {
            let local: Vec<f64> = ws.block_cols(j).map(|c| theta[c]).collect();
            ws.block_to_original(j, &local)
        })
        .collect();
    let group_norms: Vec<f64> = (0..ws.p).map(|j| ws.block_norm(j, theta)).collect();
    FitResult {
        linear_set: recompute_linear_set(&u),
        v,
        u,
        group_norms,
        lambda,
        objective_trace: trace,
        converged,
        n_iter,
    }
}

pub(crate) fn unpenalized_on(
    ws: &WorkingDesign,
    restrict: &[usize],
    rcond: f64,
) -> Result<FitResult> {
    let active: Vec<bool> = (0..ws.p).map(|j| !restrict.contains(&j)).collect();
    let weights = vec![0.0; ws.p];
    let theta = solve_weighted(ws, &active, &weights, rcond)?;
    let params = ScadParams::with_lambda(0.0).expect("valid");
    let obj = ws.objective_at(&theta, &params);
    Ok(theta_to_fit(ws, &theta, 0.0, vec![obj], true, 1))
}

/// Non-penalized least squares of the within-demeaned response on the
/// design, with the nonlinear blocks in `restrict` forced to zero.
pub fn fit_unpenalized(
    design: &BasisEval,
    y: &DMatrix<f64>,
    restrict: &[usize],
) -> Result<FitResult> {
    let ws = WorkingDesign::assemble(design, y, None)?;
    unpenalized_on(&ws, restrict, RCOND)
}

/// Options for the LQA iteration.
#[derive(Debug, Clone)]
pub struct LqaOptions {
    pub max_iter: usize,
    /// Convergence tolerance on the max absolute coefficient change.
    pub tol: f64,
    /// Warm-start coefficients (v, u); defaults to the unpenalized fit.
    pub init: Option<(Vec<f64>, Vec<Vec<f64>>)>,
    /// Absolute hard-zero threshold on group norms; defaults to
    /// 1e-6 times the demeaned response scale.
    pub norm_threshold: Option<f64>,
    /// Relative eigenvalue cutoff for the stabilized solves.
    pub rcond: f64,
}

impl Default for LqaOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-7,
            init: None,
            norm_threshold: None,
            rcond: RCOND,
        }
    }
}

fn init_theta(ws: &WorkingDesign, opts: &LqaOptions) -> Result<DVector<f64>> {
    match &opts.init {
        Some((v, u)) => {
            if v.len() != ws.p || u.len() != ws.p {
                return Err(Error::ShapeMismatch("warm start has wrong p".into()));
            }
            let mut theta = DVector::zeros(ws.total_cols);
            for j in 0..ws.p {
                theta[j] = v[j];
                if u[j].len() != ws.dims[j] {
                    return Err(Error::ShapeMismatch(format!(
                        "warm start block {j} has length {}, expected {}",
                        u[j].len(),
                        ws.dims[j]
                    )));
                }
                let local = ws.block_to_local(j, &u[j]);
                for (c, col) in ws.block_cols(j).enumerate() {
                    theta[col] = local[c];
                }
            }
            Ok(theta)
        }
        None => {
            let base = unpenalized_on(ws, &[], opts.rcond)?;
            let mut theta = DVector::zeros(ws.total_cols);
            for j in 0..ws.p {
                theta[j] = base.v[j];
                let local = ws.block_to_local(j, &base.u[j]);
                for (c, col) in ws.block_cols(j).enumerate() {
                    theta[col] = local[c];
                }
            }
            Ok(theta)
        }
    }
}

pub(crate) fn penalized_on(
    ws: &WorkingDesign,
    params: &ScadParams,
    opts: &LqaOptions,
) -> Result<FitResult> {
    let nt = ws.nt();
    let scale = (ws.y_norm_sq / nt as f64).sqrt();
    let tau = opts
        .norm_threshold
        .unwrap_or(DEFAULT_NORM_THRESHOLD_REL * scale);

    let mut theta = init_theta(ws, opts)?;
    // Empty blocks carry no coefficients and count as linear throughout.
    let mut active: Vec<bool> = ws.dims.iter().map(|&d| d > 0).collect();
    let mut weights = vec![0.0; ws.p];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;

    for _ in 0..opts.max_iter {
        n_iter += 1;
        if params.lambda > 0.0 {
            for j in 0..ws.p {
                if !active[j] {
                    continue;
                }
                let q = ws.block_quad_form(j, &theta);
                match lqa_weight(q, nt, params, tau) {
                    LqaWeight::BelowThreshold => {
                        active[j] = false;
                        for c in ws.block_cols(j) {
                            theta[c] = 0.0;
                        }
                    }
                    // Tangent of the concave map q -> p(sqrt(q/NT)) in the
                    // NT-scaled subproblem is D_j/2 on u'Gu.
                    LqaWeight::Weight(d) => weights[j] = d / 2.0,
                }
            }
        }
        let new_theta = solve_weighted(ws, &active, &weights, opts.rcond)?;
        let delta = (&new_theta - &theta).abs().max();
        theta = new_theta;
        trace.push(ws.objective_at(&theta, params));
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    // Settle blocks that finished below the hard-zero threshold.
    if params.lambda > 0.0 {
        let mut changed = false;
        for j in 0..ws.p {
            if active[j] && ws.block_norm(j, &theta) <= tau {
                active[j] = false;
                for c in ws.block_cols(j) {
                    theta[c] = 0.0;
                }
                changed = true;
            }
        }
        if changed {
            theta = solve_weighted(ws, &active, &weights, opts.rcond)?;
            trace.push(ws.objective_at(&theta, params));
        }
    }

    Ok(theta_to_fit(ws, &theta, params.lambda, trace, converged, n_iter))
}

/// SCAD-penalized fit by local quadratic approximation: each iteration
/// solves one joint ridge problem over all still-active blocks; blocks
/// whose group norm falls below the hard-zero threshold are removed for
/// good. If `max_iter` is exhausted the best iterate is returned with
/// `converged = false`.
pub fn fit_penalized_lqa(
    design: &BasisEval,
    y: &DMatrix<f64>,
    params: &ScadParams,
    opts: &LqaOptions,
) -> Result<FitResult> {
    let ws = WorkingDesign::assemble(design, y, None)?;
    penalized_on(&ws, params, opts)
}

/// Penalized objective l_NT at arbitrary coefficients.
pub fn objective(
    design: &BasisEval,
    y: &DMatrix<f64>,
    v: &[f64],
    u: &[Vec<f64>],
    params: &ScadParams,
) -> Result<f64> {
    let p = design.p();
    if v.len() != p || u.len() != p {
        return Err(Error::ShapeMismatch("coefficient lengths".into()));
    }
    for j in 0..p {
        if u[j].len() != design.specs[j].nonlinear_dim() {
            return Err(Error::ShapeMismatch(format!("block {j} length")));
        }
    }
    if y.nrows() != design.n || y.ncols() != design.t {
        return Err(Error::ShapeMismatch("response shape".into()));
    }
    let (n, t) = (design.n, design.t);
    let fit = FitResult {
        v: v.to_vec(),
        u: u.to_vec(),
        linear_set: vec![],
        group_norms: vec![],
        lambda: params.lambda,
        objective_trace: vec![],
        converged: true,
        n_iter: 0,
    };
    let fitted = fit.fitted_values(design);
    let resid = DMatrix::from_fn(n, t, |i, s| y[(i, s)] - fitted[i * t + s]);
    let mut val = nt_norm_sq(&resid);
    for j in 0..p {
        if !u[j].is_empty() {
            let uj = DVector::from_column_slice(&u[j]);
            let vals = &design.b_nl[j] * uj;
            let mat = DMatrix::from_fn(n, t, |i, s| vals[i * t + s]);
            let norm = nt_norm_sq(&mat).max(0.0).sqrt();
            val += scad_value(norm, params)?;
        }
    }
    Ok(val)
}
