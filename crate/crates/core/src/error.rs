use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum SurvError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column \"{column}\": {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("cohort is empty")]
    EmptyCohort,

    #[error("no informative features: every column is constant")]
    NoInformativeFeatures,

    #[error("censoring calibration failed: target {target}, best achievable {achieved}")]
    Calibration { target: f64, achieved: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty region: mask has no occupied voxels")]
    EmptyRegion,

    #[error("non-finite numeric input: {0}")]
    Numeric(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("Cox fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize, last: Vec<f64> },

    #[error("ill-conditioned information matrix: {0}")]
    Conditioning(String),

    #[error("training failed: {message}")]
    Training { message: String, trace: Vec<f64> },

    #[error("exact attribution supports at most {max} features, got {d}; use permutation importance")]
    TooManyFeatures { d: usize, max: usize },

    #[error("degenerate stratification: all risk scores are identical")]
    DegenerateStratification,

    #[error("pipeline failed at step '{step}': {message}")]
    Pipeline { step: String, message: String },
}

pub type Result<T> = std::result::Result<T, SurvError>;
