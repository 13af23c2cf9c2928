//! Solution path over an ascending lambda grid and the candidate models
//! it produces.
//!
//! Each grid point warm-starts from the previous fit, except that blocks
//! the previous fit zeroed are re-seeded from the unpenalized fit before
//! thresholding; otherwise a zero at one lambda would be absorbing for
//! the rest of the path.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisEval;
use crate::error::{Error, Result};
use crate::estimator::{penalized_on, unpenalized_on, FitResult, LqaOptions, WorkingDesign};
use crate::penalty::ScadParams;

/// One grid point of the path: either a fit or the error that stopped it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEntry {
    pub lambda: f64,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

/// A distinct linear set on the path and the lambdas where it occurs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathModel {
    pub linear_set: Vec<usize>,
    /// Grid values (ascending) whose fit selected this set.
    pub lambdas: Vec<f64>,
}

/// Fits across the lambda grid plus the deduplicated candidate models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionPath {
    pub grid: Vec<f64>,
    pub entries: Vec<PathEntry>,
    pub models: Vec<PathModel>,
}

/// The default grid: log(lambda) = -6, -5.9, ..., 0.9, 1 (71 values).
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=70).map(|k| ((k as f64 - 60.0) / 10.0).exp()).collect()
}

/// Distinct linear sets in order of first appearance, skipping failed
/// grid points.
pub fn extract_models(path: &SolutionPath) -> Vec<PathModel> {
    let mut models: Vec<PathModel> = Vec::new();
    for entry in &path.entries {
        let Some(fit) = &entry.fit else { continue };
        match models
            .iter_mut()
            .find(|m| m.linear_set == fit.linear_set)
        {
            Some(m) => m.lambdas.push(entry.lambda),
            None => models.push(PathModel {
                linear_set: fit.linear_set.clone(),
                lambdas: vec![entry.lambda],
            }),
        }
    }
    models
}

pub(crate) fn fit_path_on(
    ws: &WorkingDesign,
    grid: &[f64],
    kappa: f64,
    opts: &LqaOptions,
) -> Result<SolutionPath> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::UnsortedGrid);
    }
    let base = unpenalized_on(ws, &[], opts.rcond)?;
    let mut entries = Vec::with_capacity(grid.len());
    let mut prev: Option<FitResult> = None;
    for &lambda in grid {
        let params = ScadParams::new(lambda, kappa)?;
        let init = match &prev {
            None => (base.v.clone(), base.u.clone()),
            Some(f) => {
                let mut u = f.u.clone();
                for (j, uj) in u.iter_mut().enumerate() {
                    if uj.iter().all(|&x| x == 0.0) {
                        *uj = base.u[j].clone();
                    }
                }
                (f.v.clone(), u)
            }
        };
        let point_opts = LqaOptions {
            init: Some(init),
            ..opts.clone()
        };
        match penalized_on(ws, &params, &point_opts) {
            Ok(fit) => {
                prev = Some(fit.clone());
                entries.push(PathEntry {
                    lambda,
                    fit: Some(fit),
                    error: None,
                });
            }
            Err(e) => entries.push(PathEntry {
                lambda,
                fit: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let mut path = SolutionPath {
        grid: grid.to_vec(),
        entries,
        models: Vec::new(),
    };
    path.models = extract_models(&path);
    Ok(path)
}

/// Fit the penalized estimator at every grid point (ascending lambda)
/// with warm starts, recording per-point failures instead of aborting.
pub fn fit_path(
    design: &BasisEval,
    y: &DMatrix<f64>,
    grid: &[f64],
    kappa: f64,
    opts: &LqaOptions,
) -> Result<SolutionPath> {
    let ws = WorkingDesign::assemble(design, y, None)?;
    fit_path_on(&ws, grid, kappa, opts)
}

/// Path report as CSV with columns `lambda,j,group_norm,is_linear`
/// (j is 1-based to match z1..zp column naming).
pub fn path_to_csv(path: &SolutionPath) -> String {
    let mut out = String::from("lambda,j,group_norm,is_linear\n");
    for entry in &path.entries {
        let Some(fit) = &entry.fit else { continue };
        for (j, norm) in fit.group_norms.iter().enumerate() {
            let is_lin = fit.linear_set.contains(&j);
            out.push_str(&format!(
                "{},{},{},{}\n",
                entry.lambda,
                j + 1,
                norm,
                is_lin
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_design, BasisSpec};
    use crate::panel::PanelDataset;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_grid_endpoints_and_length() {
        let grid = default_lambda_grid();
        assert_eq!(grid.len(), 71);
        assert_abs_diff_eq!(grid[0], (-6.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(grid[70], 1.0f64.exp(), epsilon = 1e-15);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    fn small_instance() -> (PanelDataset, BasisEval) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let t = 4;
        let z1 = DMatrix::from_fn(n, t, |_, _| rng.gen::<f64>());
        let z2 = DMatrix::from_fn(n, t, |_, _| rng.gen::<f64>());
        let y = DMatrix::from_fn(n, t, |i, s| {
            2.0 * z1[(i, s)] + (8.0 * z2[(i, s)]).sin() * 2.0
                + i as f64
                + 0.05 * rng.gen::<f64>()
        });
        let labels = |k: usize| (0..k).map(|v| v.to_string()).collect::<Vec<_>>();
        let d = PanelDataset::from_parts(
            y,
            vec![z1, z2],
            labels(n),
            labels(t),
            vec!["z1".into(), "z2".into()],
            true,
        )
        .unwrap();
        let specs = vec![
            BasisSpec::uniform(2, 3).unwrap(),
            BasisSpec::uniform(2, 3).unwrap(),
        ];
        let eval = build_design(&d, &specs).unwrap();
        (d, eval)
    }

    #[test]
    fn single_point_grid_at_zero_is_unpenalized() {
        let (d, eval) = small_instance();
        let path = fit_path(&eval, d.y(), &[0.0], 3.7, &LqaOptions::default()).unwrap();
        assert_eq!(path.entries.len(), 1);
        let fit = path.entries[0].fit.as_ref().unwrap();
        let unpen = crate::estimator::fit_unpenalized(&eval, d.y(), &[]).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(fit.v[j], unpen.v[j], epsilon = 1e-8);
        }
        assert_eq!(path.models.len(), 1);
    }

    #[test]
    fn unsorted_grid_rejected() {
        let (d, eval) = small_instance();
        assert!(matches!(
            fit_path(&eval, d.y(), &[0.1, 0.1], 3.7, &LqaOptions::default()),
            Err(Error::UnsortedGrid)
        ));
        assert!(matches!(
            fit_path(&eval, d.y(), &[], 3.7, &LqaOptions::default()),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn extract_models_dedups_in_order() {
        let mk = |set: &[usize], lambda: f64| PathEntry {
            lambda,
            fit: Some(FitResult {
                v: vec![],
                u: vec![],
                linear_set: set.to_vec(),
                group_norms: vec![],
                lambda,
                objective_trace: vec![],
                converged: true,
                n_iter: 1,
            }),
            error: None,
        };
        let path = SolutionPath {
            grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            entries: vec![
                mk(&[], 0.1),
                mk(&[], 0.2),
                mk(&[3], 0.3),
                mk(&[2, 3], 0.4),
                mk(&[0, 1, 2, 3], 0.5),
            ],
            models: vec![],
        };
        let models = extract_models(&path);
        assert_eq!(models.len(), 4);
        assert_eq!(models[0].linear_set, Vec::<usize>::new());
        assert_eq!(models[0].lambdas, vec![0.1, 0.2]);
        assert_eq!(models[1].linear_set, vec![3]);
        assert_eq!(models[3].linear_set, vec![0, 1, 2, 3]);
    }

    #[test]
    fn path_endpoints_small_instance() {
        // Small lambda keeps the strongly nonlinear block; large lambda
        // zeroes everything.
        let (d, eval) = small_instance();
        let grid = vec![1e-4, 0.05, 0.3, 1.0, 3.0, 10.0];
        let path = fit_path(&eval, d.y(), &grid, 3.7, &LqaOptions::default()).unwrap();
        let first = path.entries.first().unwrap().fit.as_ref().unwrap();
        assert!(!first.linear_set.contains(&1), "sine block should survive");
        let last = path.entries.last().unwrap().fit.as_ref().unwrap();
        assert_eq!(last.linear_set, vec![0, 1]);
    }

    #[test]
    fn csv_report_shape() {
        let (d, eval) = small_instance();
        let path = fit_path(&eval, d.y(), &[0.01, 0.5], 3.7, &LqaOptions::default()).unwrap();
        let csv = path_to_csv(&path);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines[0], "lambda,j,group_norm,is_linear");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[1].starts_with("0.01,1,"));
    }
}
