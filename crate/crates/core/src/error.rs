use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("value {value} is not an integer multiple of the quantum {quantum}")]
    OffGrid { value: String, quantum: String },

    #[error("multiplicity must be positive, got {0}")]
    NonPositiveMultiplicity(i64),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("inadmissible mean: M = {mean} exceeds xbar = {xbar}")]
    InadmissibleMean { mean: String, xbar: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inadmissible parameters: nu = {nu} must be below beta * x_1 = {limit}")]
    InadmissibleParams { nu: f64, limit: f64 },

    #[error("energy {target} is unreachable for any positive beta (achievable range ({low}, {high}]")]
    Bracket { target: f64, low: f64, high: f64 },

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("count table guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("count table energy range {have} is below the required {need}")]
    TruncatedTable { have: u64, need: u64 },

    #[error("empty ensemble: no occupancy satisfies the constraints")]
    EmptyEnsemble,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GuardExceeded(_) | Error::TruncatedTable { .. } => 3,
            Error::Io(_) => 4,
            _ => 2,
        }
    }
}
