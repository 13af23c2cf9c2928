//! Balanced panel ingestion, min-max scaling, and the within transform.
//!
//! The within transform applies H = I_T - (1/T) 11' to each individual's
//! T-vector, which removes additive individual fixed effects. All
//! operations assume (and enforce) a balanced panel stored row-major by
//! individual, then time.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names mapping a long-format CSV onto the panel structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub time: String,
    pub response: String,
    pub regressors: Vec<String>,
}

impl CsvSchema {
    pub fn new(
        id: impl Into<String>,
        time: impl Into<String>,
        response: impl Into<String>,
        regressors: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            time: time.into(),
            response: response.into(),
            regressors,
        }
    }
}

/// A balanced N x T panel with p regressors.
///
/// `y[(i, t)]` is the response for individual i at period t; `z[j]` holds
/// the j-th regressor as an N x T matrix. Regressors are expected on
/// [0, 1] after [`scale_regressors`]; `is_scaled` tracks that state.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    n: usize,
    t: usize,
    p: usize,
    y: DMatrix<f64>,
    z: Vec<DMatrix<f64>>,
    ids: Vec<String>,
    times: Vec<String>,
    regressor_names: Vec<String>,
    scaled: bool,
}

impl PanelDataset {
    /// Build a dataset from in-memory matrices. `scaled` asserts that
    /// every regressor already lies in [0, 1].
    pub fn from_parts(
        y: DMatrix<f64>,
        z: Vec<DMatrix<f64>>,
        ids: Vec<String>,
        times: Vec<String>,
        regressor_names: Vec<String>,
        scaled: bool,
    ) -> Result<Self> {
        let n = y.nrows();
        let t = y.ncols();
        if n < 2 || t < 2 {
            return Err(Error::PanelTooSmall { n, t });
        }
        let p = z.len();
        for zj in &z {
            if zj.nrows() != n || zj.ncols() != t {
                return Err(Error::ShapeMismatch(format!(
                    "regressor matrix is {}x{}, expected {}x{}",
                    zj.nrows(),
                    zj.ncols(),
                    n,
                    t
                )));
            }
        }
        if ids.len() != n || times.len() != t || regressor_names.len() != p {
            return Err(Error::ShapeMismatch(
                "label lengths do not match panel dimensions".into(),
            ));
        }
        Ok(Self {
            n,
            t,
            p,
            y,
            z,
            ids,
            times,
            regressor_names,
            scaled,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn nt(&self) -> usize {
        self.n * self.t
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// The j-th regressor as an N x T matrix.
    pub fn z(&self, j: usize) -> &DMatrix<f64> {
        &self.z[j]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    /// Response flattened row-major by individual then time.
    pub fn y_flat(&self) -> DVector<f64> {
        flatten(&self.y)
    }
}

/// Per-regressor affine maps taking each column onto [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingMap {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ScalingMap {
    /// Map an original-axis value of regressor j onto [0, 1].
    pub fn to_unit(&self, j: usize, z: f64) -> f64 {
        (z - self.mins[j]) / (self.maxs[j] - self.mins[j])
    }

    /// Map a unit-interval value of regressor j back onto the original axis.
    pub fn to_original(&self, j: usize, w: f64) -> f64 {
        self.mins[j] + w * (self.maxs[j] - self.mins[j])
    }

    pub fn range(&self, j: usize) -> f64 {
        self.maxs[j] - self.mins[j]
    }
}

fn flatten(x: &DMatrix<f64>) -> DVector<f64> {
    let (n, t) = (x.nrows(), x.ncols());
    DVector::from_fn(n * t, |k, _| x[(k / t, k % t)])
}

/// Sort labels numerically when every label parses as a number,
/// lexicographically otherwise.
fn sort_labels(labels: &mut Vec<String>) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => {
            labels.sort_by(|a, b| {
                let av: f64 = a.parse().unwrap();
                let bv: f64 = b.parse().unwrap();
                av.partial_cmp(&bv).unwrap()
            });
        }
        None => labels.sort(),
    }
}

/// Load a balanced panel from a long-format CSV (`id,time,y,z1,...,zp`).
///
/// Rows may arrive in any order; the result is sorted by (id, time).
/// Regressors are returned unscaled.
pub fn load_panel_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let y_col = col(&schema.response)?;
    let z_cols: Vec<usize> = schema
        .regressors
        .iter()
        .map(|r| col(r))
        .collect::<Result<_>>()?;
    let p = z_cols.len();

    let parse = |field: &str, column: &str, row: usize| -> Result<f64> {
        let v: f64 = field.trim().parse().map_err(|_| Error::NonNumeric {
            column: column.to_string(),
            value: field.to_string(),
            row,
        })?;
        if !v.is_finite() {
            return Err(Error::NonNumeric {
                column: column.to_string(),
                value: field.to_string(),
                row,
            });
        }
        Ok(v)
    };

    let mut cells: BTreeMap<(String, String), (f64, Vec<f64>)> = BTreeMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let time = record.get(time_col).unwrap_or("").trim().to_string();
        let yv = parse(record.get(y_col).unwrap_or(""), &schema.response, row)?;
        let mut zs = Vec::with_capacity(p);
        for (j, &c) in z_cols.iter().enumerate() {
            zs.push(parse(
                record.get(c).unwrap_or(""),
                &schema.regressors[j],
                row,
            )?);
        }
        if cells.insert((id.clone(), time.clone()), (yv, zs)).is_some() {
            return Err(Error::DuplicateCell { id, time });
        }
    }

    let mut ids: Vec<String> = cells.keys().map(|(i, _)| i.clone()).collect();
    ids.sort();
    ids.dedup();
    let mut times: Vec<String> = cells.keys().map(|(_, t)| t.clone()).collect();
    times.sort();
    times.dedup();
    sort_labels(&mut ids);
    sort_labels(&mut times);

    let n = ids.len();
    let t = times.len();
    if n < 2 || t < 2 {
        return Err(Error::PanelTooSmall { n, t });
    }
    let mut y = DMatrix::zeros(n, t);
    let mut z: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, t); p];
    for (i, id) in ids.iter().enumerate() {
        for (s, time) in times.iter().enumerate() {
            let (yv, zs) = cells
                .get(&(id.clone(), time.clone()))
                .ok_or_else(|| Error::MissingCell {
                    id: id.clone(),
                    time: time.clone(),
                })?;
            y[(i, s)] = *yv;
            for j in 0..p {
                z[j][(i, s)] = zs[j];
            }
        }
    }

    PanelDataset::from_parts(y, z, ids, times, schema.regressors.clone(), false)
}

/// Min-max scale every regressor onto [0, 1], returning the scaled panel
/// and the affine maps for reporting back on the original axes.
pub fn scale_regressors(d: &PanelDataset) -> Result<(PanelDataset, ScalingMap)> {
    let mut mins = Vec::with_capacity(d.p);
    let mut maxs = Vec::with_capacity(d.p);
    let mut z = Vec::with_capacity(d.p);
    for j in 0..d.p {
        let zj = &d.z[j];
        let min = zj.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = zj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::ConstantRegressor(j));
        }
        mins.push(min);
        maxs.push(max);
        z.push(zj.map(|v| (v - min) / (max - min)));
    }
    let scaled = PanelDataset {
        n: d.n,
        t: d.t,
        p: d.p,
        y: d.y.clone(),
        z,
        ids: d.ids.clone(),
        times: d.times.clone(),
        regressor_names: d.regressor_names.clone(),
        scaled: true,
    };
    Ok((scaled, ScalingMap { mins, maxs }))
}

/// Subtract each row's mean: the within transform H applied per individual.
pub fn within_demean(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    let t = x.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / t;
        row.add_scalar_mut(-mean);
    }
    out
}
