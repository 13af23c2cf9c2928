//! Monte Carlo harness: the four-component data-generating process, the
//! component-wise RMSE metric, and the detection / coverage / RMSE
//! experiments.
//!
//! The DGP is y_it = f1(z1) + f2(z2) + f3(z3) + f4(z4) + alpha_i + eps_it
//! with f1(z) = 2z, f2(z) = 3z, f3(z) = z + r sin(6z),
//! f4(z) = z + r beta_{6,9}(z); z1 = u1 + alpha_i, z2 and z3 share an
//! individual shift delta_i, z4 is plain uniform. Everything is driven
//! by one seedable generator with an independent stream per replication.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, BasisSpec};
use crate::error::{Error, Result};
use crate::estimator::{fit_unpenalized, FitResult, LqaOptions};
use crate::inference::{default_hac_window, HacKernel, InferenceEngine};
use crate::panel::{scale_regressors, PanelDataset, ScalingMap};
use crate::path::{default_lambda_grid, fit_path};
use crate::quad::integrate;
use crate::tuning::{
    default_inv_bandwidth_grid, kfold_split, lambda_for_inference, select_bandwidth_degree,
    select_lambda_estimation, select_model, selection_index, Criterion, TuningConfig,
};

/// The true linear set of the DGP (components 1 and 2, 0-based).
pub const TRUE_LINEAR_SET: [usize; 2] = [0, 1];

/// Simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    /// Nonlinearity strength multiplying the sine and beta-density bumps.
    pub r: f64,
    pub seed: u64,
    pub n_reps: usize,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::PanelTooSmall {
                n: self.n,
                t: self.t,
            });
        }
        if self.r < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "nonlinearity strength must be >= 0, got {}",
                self.r
            )));
        }
        if self.n_reps < 1 {
            return Err(Error::InvalidConfig("n_reps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Density of the Beta(6, 9) distribution: 18018 z^5 (1-z)^8.
pub fn beta_density_6_9(z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::OutOfDomain(z));
    }
    Ok(18018.0 * z.powi(5) * (1.0 - z).powi(8))
}

/// Ground truth retained alongside a generated panel: raw regressors,
/// shocks, and the scaling maps used to put the panel on [0, 1].
#[derive(Debug, Clone)]
pub struct TruthBundle {
    pub r: f64,
    /// Raw (pre-scaling) regressors, one N x T matrix per component.
    pub raw_z: Vec<DMatrix<f64>>,
    pub alpha: Vec<f64>,
    pub eps: DMatrix<f64>,
    pub scaling: ScalingMap,
}

impl TruthBundle {
    /// True component function on the raw axis.
    pub fn component(&self, j: usize, z: f64) -> f64 {
        match j {
            0 => 2.0 * z,
            1 => 3.0 * z,
            2 => z + self.r * (6.0 * z).sin(),
            3 => z + self.r * beta_density_6_9(z).expect("z4 lies in [0,1]"),
            _ => panic!("component index {j} out of range"),
        }
    }

    /// True component composed with the inverse scaling map: the
    /// function of the unit-interval regressor the estimator sees.
    pub fn component_scaled(&self, j: usize, w: f64) -> f64 {
        self.component(j, self.scaling.to_original(j, w))
    }

    /// Average of the scaled component over the unit interval; this is
    /// the constant the sieve normalization removes, since every basis
    /// function integrates to zero.
    pub fn uniform_centering(&self, j: usize) -> f64 {
        integrate(|w| self.component_scaled(j, w), 0.0, 1.0, 128)
    }

    /// Centered truth on the scaled axis: what fhat_j estimates.
    pub fn centered_truth(&self, j: usize, w: f64) -> f64 {
        self.component_scaled(j, w) - self.uniform_centering(j)
    }

    /// Sample mean of f_j over the generated raw regressor values.
    pub fn sample_centering(&self, j: usize) -> f64 {
        let zj = &self.raw_z[j];
        zj.iter().map(|&z| self.component(j, z)).sum::<f64>() / (zj.nrows() * zj.ncols()) as f64
    }

    /// True slope of a linear component in the scaled parameterization
    /// beta_j (w - 1/2); `None` for the nonlinear components when r > 0.
    pub fn true_scaled_slope(&self, j: usize) -> Option<f64> {
        let raw_slope = match j {
            0 => 2.0,
            1 => 3.0,
            2 | 3 if self.r == 0.0 => 1.0,
            _ => return None,
        };
        Some(raw_slope * self.scaling.range(j))
    }
}

/// Generate one replication of the DGP. `rep` selects an independent
/// RNG stream so replications are reproducible in parallel.
pub fn gen_dgp(cfg: &DgpConfig, rep: u64) -> Result<(PanelDataset, TruthBundle)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep);
    let (n, t) = (cfg.n, cfg.t);

    let alpha: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let delta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut u = vec![DMatrix::zeros(n, t); 4];
    for i in 0..n {
        for s in 0..t {
            for uj in u.iter_mut() {
                uj[(i, s)] = rng.gen::<f64>();
            }
        }
    }
    let eps = DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal));

    let mut raw_z = vec![DMatrix::zeros(n, t); 4];
    for i in 0..n {
        for s in 0..t {
            raw_z[0][(i, s)] = u[0][(i, s)] + alpha[i];
            raw_z[1][(i, s)] = u[1][(i, s)] + delta[i];
            raw_z[2][(i, s)] = u[2][(i, s)] + delta[i];
            raw_z[3][(i, s)] = u[3][(i, s)];
        }
    }

    let mut truth = TruthBundle {
        r: cfg.r,
        raw_z,
        alpha,
        eps,
        scaling: ScalingMap {
            mins: vec![0.0; 4],
            maxs: vec![1.0; 4],
        },
    };

    let y = DMatrix::from_fn(n, t, |i, s| {
        (0..4)
            .map(|j| truth.component(j, truth.raw_z[j][(i, s)]))
            .sum::<f64>()
            + truth.alpha[i]
            + truth.eps[(i, s)]
    });

    let ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let times: Vec<String> = (1..=t).map(|s| s.to_string()).collect();
    let names: Vec<String> = (1..=4).map(|j| format!("z{j}")).collect();
    let raw_panel =
        PanelDataset::from_parts(y, truth.raw_z.clone(), ids, times, names, false)?;
    let (scaled, map) = scale_regressors(&raw_panel)?;
    truth.scaling = map;
    Ok((scaled, truth))
}

/// Component-wise root mean squared error over the sample:
/// sqrt((1/NT) sum_j sum_it [fhat_j(w_itj) - (f_j(z_itj) - c_j)]^2) with
/// c_j the sample mean of f_j over the generated regressor values.
pub fn rmse(fit: &FitResult, specs: &[BasisSpec], truth: &TruthBundle, d: &PanelDataset) -> f64 {
    let (n, t) = (d.n(), d.t());
    let mut total = 0.0;
    for j in 0..d.p() {
        let center = truth.sample_centering(j);
        let zj = d.z(j);
        let raw = &truth.raw_z[j];
        for i in 0..n {
            for s in 0..t {
                let fitted = fit.eval_component(specs, j, zj[(i, s)]);
                let target = truth.component(j, raw[(i, s)]) - center;
                total += (fitted - target).powi(2);
            }
        }
    }
    (total / (n * t) as f64).sqrt()
}

fn fold_seed(base: u64, rep: u64) -> u64 {
    base ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(rep.wrapping_add(1))
}

/// Shared per-replication front end: generate data, pick the bandwidth
/// by CV at lambda = 0, and build the basis specs.
fn rep_setup(
    cfg: &DgpConfig,
    tuning: &TuningConfig,
    rep: u64,
) -> Result<(PanelDataset, TruthBundle, Vec<BasisSpec>)> {
    let (d, truth) = gen_dgp(cfg, rep)?;
    let invh_grid = match &tuning.inv_bandwidths {
        Some(g) => g.clone(),
        None => default_inv_bandwidth_grid(d.nt()),
    };
    let (degrees, invh) = select_bandwidth_degree(
        &d,
        &tuning.degrees,
        &invh_grid,
        tuning.k_folds,
        fold_seed(tuning.seed.wrapping_add(cfg.seed), rep),
    )?;
    let specs: Vec<BasisSpec> = degrees
        .iter()
        .zip(&invh)
        .map(|(&r, &m)| BasisSpec::uniform(r, m))
        .collect::<Result<_>>()?;
    Ok((d, truth, specs))
}

/// Proportions from the linearity-detection experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n: usize,
    pub t: usize,
    pub r: f64,
    pub reps: usize,
    /// Fraction of replications whose solution path contains the true
    /// model.
    pub sp: f64,
    /// Fractions selecting exactly the true model by each criterion.
    pub cv: f64,
    pub aic: f64,
    pub bic: f64,
}

/// Detection experiment: per replication, fit the solution path and
/// check whether it contains the true model and whether CV/AIC/BIC pick
/// it.
pub fn run_detection_experiment(
    cfg: &DgpConfig,
    grid: &[f64],
    tuning: &TuningConfig,
) -> Result<DetectionSummary> {
    cfg.validate()?;
    let outcomes: Vec<Result<[bool; 4]>> = (0..cfg.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (d, _, specs) = rep_setup(cfg, tuning, rep)?;
            let design = build_design(&d, &specs)?;
            let path = fit_path(&design, d.y(), grid, tuning.kappa, &LqaOptions::default())?;
            let truth_set = TRUE_LINEAR_SET.to_vec();
            let sp_hit = path.models.iter().any(|m| m.linear_set == truth_set);
            let models: Vec<Vec<usize>> =
                path.models.iter().map(|m| m.linear_set.clone()).collect();
            let folds = kfold_split(
                d.n(),
                tuning.k_folds,
                fold_seed(tuning.seed.wrapping_add(cfg.seed).wrapping_add(1), rep),
            )?;
            let report = select_model(&models, &d, &specs, Criterion::Cv, &folds)?;
            let by = |c: Criterion| {
                report.scores[selection_index(&report.scores, c)].linear_set == truth_set
            };
            Ok([
                sp_hit,
                by(Criterion::Cv),
                by(Criterion::Aic),
                by(Criterion::Bic),
            ])
        })
        .collect();
    let mut counts = [0usize; 4];
    for o in outcomes {
        let flags = o?;
        for (c, f) in counts.iter_mut().zip(flags) {
            *c += usize::from(f);
        }
    }
    let denom = cfg.n_reps as f64;
    Ok(DetectionSummary {
        n: cfg.n,
        t: cfg.t,
        r: cfg.r,
        reps: cfg.n_reps,
        sp: counts[0] as f64 / denom,
        cv: counts[1] as f64 / denom,
        aic: counts[2] as f64 / denom,
        bic: counts[3] as f64 / denom,
    })
}

/// Coverage of the pointwise CI for one component at one point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageCell {
    pub j: usize,
    pub z0: f64,
    pub coverage: f64,
    pub avg_width: f64,
    /// Replications whose interval collapsed to a point.
    pub n_degenerate: usize,
    pub reps: usize,
}

/// Conditional coverage of the slope CI for a component, over the
/// replications that detected it as linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaCoverage {
    pub j: usize,
    pub coverage: f64,
    pub n_detected: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub n: usize,
    pub t: usize,
    pub r: f64,
    pub reps: usize,
    pub level: f64,
    pub cells: Vec<CoverageCell>,
    pub beta: Vec<BetaCoverage>,
}

struct CoverageRep {
    covered: Vec<bool>,
    width: Vec<f64>,
    degenerate: Vec<bool>,
    detected_linear: [bool; 2],
    beta_covered: [bool; 2],
}

/// Coverage experiment: per replication run the full pipeline
/// (bandwidth CV, solution path, CV model selection, restricted refit)
/// and record whether each 95% CI covers the centered truth.
///
/// Truth centering is the unit-interval average of the scaled component,
/// which is the normalization the sieve imposes. Slope CIs are scored
/// only on replications that detect the component as linear.
pub fn run_coverage_experiment(
    cfg: &DgpConfig,
    points: &[f64],
    level: f64,
    tuning: &TuningConfig,
) -> Result<CoverageSummary> {
    cfg.validate()?;
    let grid = match &tuning.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(),
    };
    let reps: Vec<Result<CoverageRep>> = (0..cfg.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (d, truth, specs) = rep_setup(cfg, tuning, rep)?;
            let design = build_design(&d, &specs)?;
            let path = fit_path(&design, d.y(), &grid, tuning.kappa, &LqaOptions::default())?;
            let models: Vec<Vec<usize>> =
                path.models.iter().map(|m| m.linear_set.clone()).collect();
            let folds = kfold_split(
                d.n(),
                tuning.k_folds,
                fold_seed(tuning.seed.wrapping_add(cfg.seed).wrapping_add(1), rep),
            )?;
            let report = select_model(&models, &d, &specs, Criterion::Cv, &folds)?;
            let j_cv = report.selected.clone();
            let _lambda_inf = lambda_for_inference(&path, &j_cv)?;
            let refit = fit_unpenalized(&design, d.y(), &j_cv)?;
            let engine = InferenceEngine::new(
                &design,
                d.y(),
                &refit,
                &j_cv,
                default_hac_window(d.t()),
                HacKernel::Bartlett,
            )?;
            let mut covered = Vec::with_capacity(4 * points.len());
            let mut width = Vec::with_capacity(4 * points.len());
            let mut degenerate = Vec::with_capacity(4 * points.len());
            // Floating-point guard for the width-zero interval at the
            // degenerate point, where the centered truth is an exact 0.
            let tol = 1e-9;
            for j in 0..4 {
                for &z0 in points {
                    let row = engine.ci(j, Some(z0), level)?;
                    let target = truth.centered_truth(j, z0);
                    covered.push(target >= row.lower - tol && target <= row.upper + tol);
                    width.push(row.upper - row.lower);
                    degenerate.push(row.degenerate);
                }
            }
            let mut detected_linear = [false; 2];
            let mut beta_covered = [false; 2];
            for j in TRUE_LINEAR_SET {
                if j_cv.contains(&j) {
                    detected_linear[j] = true;
                    let row = engine.ci(j, None, level)?;
                    let slope = truth.true_scaled_slope(j).expect("linear truth");
                    beta_covered[j] = slope >= row.lower && slope <= row.upper;
                }
            }
            Ok(CoverageRep {
                covered,
                width,
                degenerate,
                detected_linear,
                beta_covered,
            })
        })
        .collect();

    let mut done = Vec::with_capacity(cfg.n_reps);
    for r in reps {
        done.push(r?);
    }
    let n_cells = 4 * points.len();
    let mut cells = Vec::with_capacity(n_cells);
    for j in 0..4 {
        for (pi, &z0) in points.iter().enumerate() {
            let k = j * points.len() + pi;
            let cov = done.iter().filter(|r| r.covered[k]).count() as f64;
            let w: f64 = done.iter().map(|r| r.width[k]).sum::<f64>();
            let degen = done.iter().filter(|r| r.degenerate[k]).count();
            cells.push(CoverageCell {
                j,
                z0,
                coverage: cov / cfg.n_reps as f64,
                avg_width: w / cfg.n_reps as f64,
                n_degenerate: degen,
                reps: cfg.n_reps,
            });
        }
    }
    let beta = TRUE_LINEAR_SET
        .iter()
        .map(|&j| {
            let detected = done.iter().filter(|r| r.detected_linear[j]).count();
            let covered = done
                .iter()
                .filter(|r| r.detected_linear[j] && r.beta_covered[j])
                .count();
            BetaCoverage {
                j,
                coverage: if detected > 0 {
                    covered as f64 / detected as f64
                } else {
                    f64::NAN
                },
                n_detected: detected,
                reps: cfg.n_reps,
            }
        })
        .collect();
    Ok(CoverageSummary {
        n: cfg.n,
        t: cfg.t,
        r: cfg.r,
        reps: cfg.n_reps,
        level,
        cells,
        beta,
    })
}

/// RMSE at one grid lambda, aggregated over replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseCell {
    pub lambda: f64,
    pub mean_rmse: f64,
    pub median_rmse: f64,
    /// Replications where this grid point failed to fit.
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseSummary {
    pub n: usize,
    pub t: usize,
    pub r: f64,
    pub reps: usize,
    pub per_lambda: Vec<RmseCell>,
    /// Median RMSE of the lambda = 0 fit.
    pub unpenalized_median: f64,
    /// Median RMSE at the per-replication CV-selected lambda.
    pub cv_tuned_median: f64,
}

pub(crate) fn median(values: &mut Vec<f64>) -> f64 {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// RMSE experiment: per replication fit the whole path, score RMSE at
/// each lambda, and additionally at lambda = 0 and at the CV-selected
/// lambda.
pub fn run_rmse_experiment(
    cfg: &DgpConfig,
    grid: &[f64],
    tuning: &TuningConfig,
) -> Result<RmseSummary> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    struct RepOut {
        per_lambda: Vec<Option<f64>>,
        unpenalized: f64,
        cv_tuned: f64,
    }
    let reps: Vec<Result<RepOut>> = (0..cfg.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (d, truth, specs) = rep_setup(cfg, tuning, rep)?;
            let design = build_design(&d, &specs)?;
            let path = fit_path(&design, d.y(), grid, tuning.kappa, &LqaOptions::default())?;
            let per_lambda: Vec<Option<f64>> = path
                .entries
                .iter()
                .map(|e| e.fit.as_ref().map(|f| rmse(f, &specs, &truth, &d)))
                .collect();
            let unpen = fit_unpenalized(&design, d.y(), &[])?;
            let unpenalized = rmse(&unpen, &specs, &truth, &d);
            let folds = kfold_split(
                d.n(),
                tuning.k_folds,
                fold_seed(tuning.seed.wrapping_add(cfg.seed).wrapping_add(2), rep),
            )?;
            let lam_cv = select_lambda_estimation(&d, &specs, grid, tuning.kappa, &folds)?;
            let gi = grid.iter().position(|&l| l == lam_cv).expect("on grid");
            let cv_tuned = per_lambda[gi].unwrap_or(unpenalized);
            Ok(RepOut {
                per_lambda,
                unpenalized,
                cv_tuned,
            })
        })
        .collect();
    let mut done = Vec::with_capacity(cfg.n_reps);
    for r in reps {
        done.push(r?);
    }
    let per_lambda = grid
        .iter()
        .enumerate()
        .map(|(gi, &lambda)| {
            let vals: Vec<f64> = done.iter().filter_map(|r| r.per_lambda[gi]).collect();
            let n_failed = cfg.n_reps - vals.len();
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let mut v = vals;
            RmseCell {
                lambda,
                mean_rmse: mean,
                median_rmse: median(&mut v),
                n_failed,
            }
        })
        .collect();
    let mut unpen: Vec<f64> = done.iter().map(|r| r.unpenalized).collect();
    let mut tuned: Vec<f64> = done.iter().map(|r| r.cv_tuned).collect();
    Ok(RmseSummary {
        n: cfg.n,
        t: cfg.t,
        r: cfg.r,
        reps: cfg.n_reps,
        per_lambda,
        unpenalized_median: median(&mut unpen),
        cv_tuned_median: median(&mut tuned),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_split;
    use approx::assert_abs_diff_eq;

    fn cfg(n: usize, t: usize, r: f64, seed: u64, reps: usize) -> DgpConfig {
        DgpConfig {
            n,
            t,
            r,
            seed,
            n_reps: reps,
        }
    }

    #[test]
    fn beta_density_values() {
        assert_eq!(beta_density_6_9(0.0).unwrap(), 0.0);
        assert_eq!(beta_density_6_9(1.0).unwrap(), 0.0);
        assert!(matches!(
            beta_density_6_9(-0.1),
            Err(Error::OutOfDomain(_))
        ));
        // Normalization by quadrature.
        let mass = integrate_split(|z| beta_density_6_9(z).unwrap(), &[0.0, 0.5, 1.0], 64);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        // Normalizing constant from the factorial oracle: 14!/(5! 8!).
        let fact = |k: u64| (1..=k).map(|v| v as f64).product::<f64>();
        assert_abs_diff_eq!(fact(14) / (fact(5) * fact(8)), 18018.0, epsilon = 1e-9);
    }

    #[test]
    fn dgp_deterministic_and_in_range() {
        let c = cfg(10, 4, 1.0, 42, 1);
        let (d1, t1) = gen_dgp(&c, 0).unwrap();
        let (d2, t2) = gen_dgp(&c, 0).unwrap();
        assert_eq!(d1.y(), d2.y());
        for j in 0..4 {
            assert_eq!(d1.z(j), d2.z(j));
            assert_eq!(t1.raw_z[j], t2.raw_z[j]);
        }
        // Different stream differs.
        let (d3, _) = gen_dgp(&c, 1).unwrap();
        assert_ne!(d1.y(), d3.y());
        // z4 is the raw uniform: always in [0, 1].
        assert!(t1.raw_z[3].iter().all(|&z| (0.0..=1.0).contains(&z)));
        // Scaled regressors are in [0, 1] and span it.
        for j in 0..4 {
            let min = d1.z(j).min();
            let max = d1.z(j).max();
            assert_eq!(min, 0.0);
            assert_eq!(max, 1.0);
        }
        // Response assembles truth + shocks.
        let ij = (3, 2);
        let manual: f64 = (0..4)
            .map(|j| t1.component(j, t1.raw_z[j][ij]))
            .sum::<f64>()
            + t1.alpha[ij.0]
            + t1.eps[ij];
        assert_abs_diff_eq!(d1.y()[ij], manual, epsilon = 1e-12);
    }

    #[test]
    fn dgp_r_zero_is_linear() {
        let (_, truth) = gen_dgp(&cfg(5, 3, 0.0, 7, 1), 0).unwrap();
        for j in 0..4 {
            for &z in &[0.1, 0.4, 0.9] {
                let slope = if j == 0 {
                    2.0
                } else if j == 1 {
                    3.0
                } else {
                    1.0
                };
                assert_abs_diff_eq!(truth.component(j, z), slope * z, epsilon = 1e-12);
            }
            assert!(truth.true_scaled_slope(j).is_some());
        }
    }

    #[test]
    fn centered_truth_is_zero_at_half_for_linear() {
        let (_, truth) = gen_dgp(&cfg(8, 3, 1.0, 11, 1), 0).unwrap();
        for j in TRUE_LINEAR_SET {
            assert_abs_diff_eq!(truth.centered_truth(j, 0.5), 0.0, epsilon = 1e-10);
        }
        assert!(truth.true_scaled_slope(2).is_none());
    }

    #[test]
    fn rmse_zero_for_matching_fit_on_symmetric_design() {
        // Symmetric scaled regressor (w and 1-w pairs) makes the sample
        // centering equal the uniform centering, so the representable
        // centered truth zeroes the metric exactly.
        let n = 4;
        let t = 2;
        let raw = DMatrix::from_fn(n, t, |i, s| {
            let w = i as f64 / 10.0;
            if s == 0 {
                w
            } else {
                1.0 - w
            }
        });
        let truth = TruthBundle {
            r: 0.0,
            raw_z: vec![raw.clone()],
            alpha: vec![0.0; n],
            eps: DMatrix::zeros(n, t),
            scaling: ScalingMap {
                mins: vec![0.0],
                maxs: vec![1.0],
            },
        };
        let labels = |k: usize| (0..k).map(|v| v.to_string()).collect::<Vec<_>>();
        let d = PanelDataset::from_parts(
            DMatrix::zeros(n, t),
            vec![raw],
            labels(n),
            labels(t),
            vec!["z1".into()],
            true,
        )
        .unwrap();
        let specs = vec![BasisSpec::uniform(1, 1).unwrap()];
        let fit = FitResult {
            v: vec![2.0],
            u: vec![vec![]],
            linear_set: vec![0],
            group_norms: vec![0.0],
            lambda: 0.0,
            objective_trace: vec![],
            converged: true,
            n_iter: 0,
        };
        let err = rmse(&fit, &specs, &truth, &d);
        assert!(err < 1e-12, "rmse = {err}");
    }

    #[test]
    fn rmse_of_zero_fit_matches_truth_variance() {
        let (d, truth) = gen_dgp(&cfg(10, 4, 1.0, 3, 1), 0).unwrap();
        let specs: Vec<BasisSpec> =
            (0..4).map(|_| BasisSpec::uniform(1, 1).unwrap()).collect();
        let zero = FitResult {
            v: vec![0.0; 4],
            u: vec![vec![]; 4],
            linear_set: vec![0, 1, 2, 3],
            group_norms: vec![0.0; 4],
            lambda: 0.0,
            objective_trace: vec![],
            converged: true,
            n_iter: 0,
        };
        let got = rmse(&zero, &specs, &truth, &d);
        // Independent accumulation: population variance of each centered
        // truth over the sample.
        let nt = (d.n() * d.t()) as f64;
        let mut acc = 0.0;
        for j in 0..4 {
            let c = truth.sample_centering(j);
            acc += truth.raw_z[j]
                .iter()
                .map(|&z| (truth.component(j, z) - c).powi(2))
                .sum::<f64>();
        }
        assert_abs_diff_eq!(got, (acc / nt).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn single_rep_detection_proportions_are_binary() {
        let c = cfg(20, 3, 1.0, 5, 1);
        let tuning = TuningConfig {
            inv_bandwidths: Some(vec![3]),
            degrees: vec![2],
            ..Default::default()
        };
        let grid: Vec<f64> = (0..8).map(|k| ((k as f64 - 5.0) / 1.5).exp()).collect();
        let out = run_detection_experiment(&c, &grid, &tuning).unwrap();
        for v in [out.sp, out.cv, out.aic, out.bic] {
            assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn median_helper() {
        let mut v = vec![3.0, 1.0, 2.0];
        assert_eq!(median(&mut v), 2.0);
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut v), 2.5);
        let mut v = vec![f64::NAN, 1.0];
        assert_eq!(median(&mut v), 1.0);
    }
}
