//! Centralized spline basis on [0, 1] and design-matrix construction.
//!
//! The basis spans the same space as the truncated-power basis
//! {z, z^2, ..., z^r, (z - t_1)^r_+, ..., (z - t_{M-1})^r_+} plus
//! constants, but every function integrates to zero over [0, 1] and every
//! function except psi_1(z) = z - 1/2 is also L2-orthogonal to psi_1.
//! That splits any member uniquely into a linear part (the psi_1
//! coefficient) and a nonlinear remainder, which is what the group
//! penalty acts on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Knot sequence of a uniform partition of [0, 1]: t_i = i/M.
pub fn make_uniform_knots(m: usize) -> Result<Vec<f64>> {
    if m < 1 {
        return Err(Error::InvalidKnotCount(m));
    }
    Ok((0..=m).map(|i| i as f64 / m as f64).collect())
}

/// Per-regressor spline definition: degree and knots on [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    degree: usize,
    knots: Vec<f64>,
}

impl BasisSpec {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidDegree(degree));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidKnotCount(knots.len().saturating_sub(1)));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidKnots(
                "knots must start at 0 and end at 1".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidKnots("knots must be strictly increasing".into()));
        }
        Ok(Self { degree, knots })
    }

    /// Uniform knots with M intervals.
    pub fn uniform(degree: usize, m: usize) -> Result<Self> {
        Self::new(degree, make_uniform_knots(m)?)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of knot intervals M.
    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Maximal gap between successive knots.
    pub fn bandwidth(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Dimension of the nonlinear block: M + r - 2.
    pub fn nonlinear_dim(&self) -> usize {
        self.n_intervals() + self.degree - 2
    }

    /// Total basis dimension: M + r - 1.
    pub fn total_dim(&self) -> usize {
        self.n_intervals() + self.degree - 1
    }
}

/// Polynomial basis function psi_k.
///
/// psi_1(z) = z - 1/2; for k >= 2,
/// psi_k(z) = (z^k - 1/(k+1)) - [6k/((k+1)(k+2))] (z - 1/2),
/// which removes the mean and the projection onto psi_1.
pub fn psi_poly(k: usize, z: f64) -> f64 {
    debug_assert!(k >= 1);
    if k == 1 {
        return z - 0.5;
    }
    let kf = k as f64;
    let centered = z.powi(k as i32) - 1.0 / (kf + 1.0);
    let slope = 6.0 * kf / ((kf + 1.0) * (kf + 2.0));
    centered - slope * (z - 0.5)
}

/// Truncated-power basis function psi~_k for interior knot t_k.
///
/// psi~_k(z) = ((z - t_k)^r_+ - (1 - t_k)^{r+1}/(r+1))
///   - {6(1 - t_k)^{r+1}/(r+1) - 12(1 - t_k)^{r+2}/((r+1)(r+2))} (z - 1/2).
pub fn psi_trunc(k: usize, degree: usize, knots: &[f64], z: f64) -> f64 {
    debug_assert!(k >= 1 && k < knots.len() - 1, "interior knot index");
    let t_k = knots[k];
    let r = degree as f64;
    let a = 1.0 - t_k;
    let pow = (z - t_k).max(0.0).powi(degree as i32);
    let centered = pow - a.powi(degree as i32 + 1) / (r + 1.0);
    let slope = 6.0 * a.powi(degree as i32 + 1) / (r + 1.0)
        - 12.0 * a.powi(degree as i32 + 2) / ((r + 1.0) * (r + 2.0));
    centered - slope * (z - 0.5)
}

/// Evaluate the full basis at z: [psi_1, psi_2, ..., psi_r, psi~_1, ...,
/// psi~_{M-1}], length M + r - 1.
///
/// Points outside [0, 1] are clamped; that can only happen for unscaled
/// queries, so a warning is logged.
pub fn eval_basis(spec: &BasisSpec, z: f64) -> Vec<f64> {
    let z = clamp_unit(z);
    let mut out = Vec::with_capacity(spec.total_dim());
    for k in 1..=spec.degree {
        out.push(psi_poly(k, z));
    }
    for k in 1..spec.knots.len() - 1 {
        out.push(psi_trunc(k, spec.degree, &spec.knots, z));
    }
    out
}

/// The nonlinear sub-basis at z: [psi_2, ..., psi_r, psi~_1, ...,
/// psi~_{M-1}], length M + r - 2.
pub fn eval_nonlinear(spec: &BasisSpec, z: f64) -> Vec<f64> {
    let mut all = eval_basis(spec, z);
    all.remove(0);
    all
}

fn clamp_unit(z: f64) -> f64 {
    if !(0.0..=1.0).contains(&z) {
        log::warn!("basis evaluation point {z} outside [0,1]; clamping");
        z.clamp(0.0, 1.0)
    } else {
        z
    }
}

/// Change of coordinates for the nonlinear block that localizes the
/// truncated powers: interior columns become divided-difference
/// combinations of r+2 consecutive truncated powers (B-spline-like,
/// supported on r+1 knot intervals), while the polynomial head and the
/// last r+1 truncated powers stay raw. The span is unchanged; solves in
/// these coordinates are well conditioned, and directions supported on
/// data-free regions show up as clean nulls instead of mixing into the
/// whole spectrum.
pub(crate) fn block_transform(spec: &BasisSpec) -> DMatrix<f64> {
    let r = spec.degree();
    let m = spec.n_intervals();
    let dim = spec.nonlinear_dim();
    let head = r - 1; // psi_2..psi_r stay raw
    let mut t_mat = DMatrix::zeros(dim, dim);
    for c in 0..head {
        t_mat[(c, c)] = 1.0;
    }
    let n_trunc = m.saturating_sub(1); // psi~ indices 1..=M-1
    let n_combo = if m >= r + 3 { m - 2 - r } else { 0 };
    let knots = spec.knots();
    for k in 0..n_combo {
        // Divided difference over knots t_{k+1}..t_{k+r+2} (psi~ index
        // k+1..k+r+2), scaled by the window width.
        let window: Vec<f64> = (0..=r + 1).map(|i| knots[k + 1 + i]).collect();
        let width = window[r + 1] - window[0];
        for i in 0..=r + 1 {
            let mut denom = 1.0;
            for (l, &tl) in window.iter().enumerate() {
                if l != i {
                    denom *= window[i] - tl;
                }
            }
            t_mat[(head + k + i, head + k)] = width / denom;
        }
    }
    for k in n_combo..n_trunc {
        t_mat[(head + k, head + k)] = 1.0;
    }
    t_mat
}

/// Evaluated design blocks for a scaled panel.
///
/// `b_minus` stacks psi_{j,1}(Z_itj) as column j (NT x p, rows ordered by
/// individual then time); `b_nl[j]` is the NT x (M_j + r_j - 2) nonlinear
/// block for regressor j.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub n: usize,
    pub t: usize,
    pub b_minus: DMatrix<f64>,
    pub b_nl: Vec<DMatrix<f64>>,
    pub specs: Vec<BasisSpec>,
}

impl BasisEval {
    pub fn p(&self) -> usize {
        self.specs.len()
    }

    pub fn nt(&self) -> usize {
        self.n * self.t
    }
}

/// Build the design blocks for every regressor of a scaled panel.
pub fn build_design(d: &PanelDataset, specs: &[BasisSpec]) -> Result<BasisEval> {
    if !d.is_scaled() {
        return Err(Error::UnscaledData);
    }
    if specs.len() != d.p() {
        return Err(Error::ShapeMismatch(format!(
            "got {} basis specs for {} regressors",
            specs.len(),
            d.p()
        )));
    }
    let (n, t) = (d.n(), d.t());
    let nt = n * t;
    let mut b_minus = DMatrix::zeros(nt, d.p());
    let mut b_nl = Vec::with_capacity(d.p());
    for (j, spec) in specs.iter().enumerate() {
        let dim = spec.nonlinear_dim();
        let mut block = DMatrix::zeros(nt, dim);
        let zj = d.z(j);
        for i in 0..n {
            for s in 0..t {
                let row = i * t + s;
                let z = zj[(i, s)];
                b_minus[(row, j)] = psi_poly(1, z);
                if dim > 0 {
                    for (c, v) in eval_nonlinear(spec, z).into_iter().enumerate() {
                        block[(row, c)] = v;
                    }
                }
            }
        }
        b_nl.push(block);
    }
    Ok(BasisEval {
        n,
        t,
        b_minus,
        b_nl,
        specs: specs.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_split;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn uniform_knots() {
        assert_eq!(make_uniform_knots(1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            make_uniform_knots(4).unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert!(matches!(
            make_uniform_knots(0),
            Err(Error::InvalidKnotCount(0))
        ));
    }

    #[test]
    fn psi_poly_values() {
        assert_abs_diff_eq!(psi_poly(1, 0.75), 0.25, epsilon = 1e-15);
        // psi_2(z) = z^2 - z + 1/6
        assert_abs_diff_eq!(psi_poly(2, 0.0), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_poly(2, 0.5), -1.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn psi_trunc_values_linear_mid_knot() {
        let knots = vec![0.0, 0.5, 1.0];
        assert_abs_diff_eq!(psi_trunc(1, 1, &knots, 0.0), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_trunc(1, 1, &knots, 0.5), -0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_trunc(1, 1, &knots, 1.0), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn basis_lengths() {
        let s = BasisSpec::uniform(1, 1).unwrap();
        let v = eval_basis(&s, 0.5);
        assert_eq!(v.len(), 1);
        assert_abs_diff_eq!(v[0], 0.0);

        let s = BasisSpec::uniform(2, 3).unwrap();
        assert_eq!(eval_basis(&s, 0.3).len(), 4);
    }

    #[test]
    fn eval_matches_elementwise_calls() {
        let s = BasisSpec::uniform(3, 5).unwrap();
        let z = 0.0;
        let v = eval_basis(&s, z);
        assert_eq!(v.len(), 7);
        for k in 1..=3 {
            assert_eq!(v[k - 1], psi_poly(k, z));
        }
        for k in 1..5 {
            assert_eq!(v[3 + k - 1], psi_trunc(k, 3, s.knots(), z));
        }
    }

    /// Quadrature oracle: every basis function has zero mean and zero
    /// projection on psi_1, for all degree/knot-count combinations the
    /// tests exercise.
    fn check_orthogonality(degree: usize, m: usize) {
        let spec = BasisSpec::uniform(degree, m).unwrap();
        let dim = spec.total_dim();
        for idx in 0..dim {
            let f = |z: f64| eval_basis(&spec, z)[idx];
            let mean = integrate_split(f, spec.knots(), 64);
            assert!(
                mean.abs() < 1e-8,
                "mean of basis fn {idx} (r={degree}, M={m}) = {mean}"
            );
            if idx > 0 {
                let proj = integrate_split(|z| (z - 0.5) * f(z), spec.knots(), 64);
                assert!(
                    proj.abs() < 1e-8,
                    "psi_1 projection of basis fn {idx} (r={degree}, M={m}) = {proj}"
                );
            }
        }
    }

    #[test]
    fn mean_zero_and_orthogonal_to_linear() {
        for degree in [1, 2, 3] {
            for m in [2, 4, 8] {
                check_orthogonality(degree, m);
            }
        }
    }

    /// Analytic value of the psi_1-projection coefficient in psi~_k,
    /// derived by integrating (z - t)^r_+ against z - 1/2 and dividing by
    /// ||psi_1||^2 = 1/12.
    #[test]
    fn trunc_slope_matches_projection_formula() {
        for degree in [1usize, 2, 3] {
            for &t_k in &[0.2f64, 0.5, 0.8] {
                let r = degree as f64;
                let a: f64 = 1.0 - t_k;
                let expected = 12.0
                    * (a.powi(degree as i32 + 2) / (r + 2.0)
                        + (t_k - 0.5) * a.powi(degree as i32 + 1) / (r + 1.0));
                let written = 6.0 * a.powi(degree as i32 + 1) / (r + 1.0)
                    - 12.0 * a.powi(degree as i32 + 2) / ((r + 1.0) * (r + 2.0));
                assert_abs_diff_eq!(expected, written, epsilon = 1e-14);
            }
        }
    }

    /// Span check: any polynomial of degree <= r minus its [0,1] average
    /// is reproduced exactly by a coefficient solve on a dense grid.
    #[test]
    fn span_reproduces_centered_polynomials() {
        for degree in [1usize, 2, 3] {
            let spec = BasisSpec::uniform(degree, 4).unwrap();
            let dim = spec.total_dim();
            // Target: q(z) = sum z^k for k<=degree, centered.
            let raw = |z: f64| (1..=degree).map(|k| z.powi(k as i32)).sum::<f64>();
            let avg: f64 = (1..=degree).map(|k| 1.0 / (k as f64 + 1.0)).sum::<f64>();
            let grid: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
            let mut a = DMatrix::zeros(grid.len(), dim);
            let mut b = DVector::zeros(grid.len());
            for (row, &z) in grid.iter().enumerate() {
                for (c, v) in eval_basis(&spec, z).into_iter().enumerate() {
                    a[(row, c)] = v;
                }
                b[row] = raw(z) - avg;
            }
            let sol = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
            let resid = (&a * &sol - &b).abs().max();
            assert!(resid < 1e-8, "degree {degree}: residual {resid}");
        }
    }

    #[test]
    fn design_shapes_and_values() {
        let y = DMatrix::zeros(2, 2);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.25]);
        let d = PanelDataset::from_parts(
            y,
            vec![z],
            vec!["1".into(), "2".into()],
            vec!["1".into(), "2".into()],
            vec!["z1".into()],
            true,
        )
        .unwrap();
        let specs = vec![BasisSpec::uniform(1, 1).unwrap()];
        let eval = build_design(&d, &specs).unwrap();
        assert_eq!(eval.b_minus.nrows(), 4);
        assert_eq!(eval.b_minus.ncols(), 1);
        assert_eq!(eval.b_nl[0].ncols(), 0);
        assert_abs_diff_eq!(eval.b_minus[(0, 0)], -0.5);
        assert_abs_diff_eq!(eval.b_minus[(1, 0)], 0.5);
        assert_abs_diff_eq!(eval.b_minus[(2, 0)], 0.0);
        assert_abs_diff_eq!(eval.b_minus[(3, 0)], -0.25);
    }

    #[test]
    fn design_rejects_unscaled() {
        let y = DMatrix::zeros(2, 2);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 3.0]);
        let d = PanelDataset::from_parts(
            y,
            vec![z],
            vec!["1".into(), "2".into()],
            vec!["1".into(), "2".into()],
            vec!["z1".into()],
            false,
        )
        .unwrap();
        let specs = vec![BasisSpec::uniform(1, 1).unwrap()];
        assert!(matches!(
            build_design(&d, &specs),
            Err(Error::UnscaledData)
        ));
    }

    #[test]
    fn design_shape_two_regressors() {
        let y = DMatrix::zeros(2, 2);
        let z1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.25]);
        let z2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.75, 0.5]);
        let d = PanelDataset::from_parts(
            y,
            vec![z1, z2],
            vec!["1".into(), "2".into()],
            vec!["1".into(), "2".into()],
            vec!["z1".into(), "z2".into()],
            true,
        )
        .unwrap();
        let specs = vec![
            BasisSpec::uniform(2, 3).unwrap(),
            BasisSpec::uniform(3, 2).unwrap(),
        ];
        let eval = build_design(&d, &specs).unwrap();
        assert_eq!(eval.b_minus.shape(), (4, 2));
        assert_eq!(eval.b_nl[0].shape(), (4, 3));
        assert_eq!(eval.b_nl[1].shape(), (4, 3));
    }
}
