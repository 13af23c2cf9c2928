//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by panel ingestion, design construction, fitting,
/// tuning, and inference.
#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        value: String,
        row: usize,
    },

    #[error("panel is unbalanced: missing cell (id={id}, time={time})")]
    MissingCell { id: String, time: String },

    #[error("duplicate cell (id={id}, time={time})")]
    DuplicateCell { id: String, time: String },

    #[error("panel too small: need N >= 2 and T >= 2, got N={n}, T={t}")]
    PanelTooSmall { n: usize, t: usize },

    #[error("regressor {0} is constant; cannot be scaled to [0,1]")]
    ConstantRegressor(usize),

    #[error("regressors must be scaled to [0,1] before building the design")]
    UnscaledData,

    #[error("invalid knot count: M must be >= 1, got {0}")]
    InvalidKnotCount(usize),

    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    #[error("invalid spline degree: must be >= 1, got {0}")]
    InvalidDegree(usize),

    #[error("SCAD argument must be nonnegative, got {0}")]
    NegativeArgument(f64),

    #[error("invalid SCAD parameters: lambda={lambda}, kappa={kappa} (need lambda >= 0, kappa > 2)")]
    InvalidScadParams { lambda: f64, kappa: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("design matrix is singular even after jitter")]
    SingularDesign,

    #[error("lambda grid must be strictly increasing")]
    UnsortedGrid,

    #[error("empty candidate grid")]
    EmptyGrid,

    #[error("no candidate produced a valid fit")]
    NoValidCandidate,

    #[error("empty model list")]
    EmptyModelList,

    #[error("cannot split N={n} individuals into k={k} folds")]
    TooManyFolds { n: usize, k: usize },

    #[error("selected model not present on the solution path")]
    ModelNotOnPath,

    #[error("V_NT is singular even after jitter")]
    SingularVnt,

    #[error("nonlinear target {0} requires an evaluation point z0")]
    MissingEvaluationPoint(usize),

    #[error("evaluation point z0={0} outside [0,1]")]
    InvalidPoint(f64),

    #[error("HAC window l_T={l_t} too large for T={t}")]
    WindowTooLarge { l_t: usize, t: usize },

    #[error("argument {0} outside [0,1]")]
    OutOfDomain(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
