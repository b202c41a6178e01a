use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("operator is numerically singular: sigma_min = {sigma_min:e} (threshold {threshold:e})")]
    NearSingular { sigma_min: f64, threshold: f64 },

    #[error("invalid Schatten exponent p = {0}")]
    InvalidP(f64),

    #[error("operator is not self-adjoint (max deviation {0:e})")]
    NotSelfAdjoint(f64),

    #[error("tag {tag} does not hold for this matrix (deviation {deviation:e})")]
    TagViolation { tag: &'static str, deviation: f64 },

    #[error("step {k} out of range (valid steps 1..={max})")]
    StepOutOfRange { k: usize, max: usize },

    #[error("insufficient steps: need {needed}, trace has {available}")]
    InsufficientSteps { needed: usize, available: usize },

    #[error("minimization did not converge within {evals} evaluations (spread {spread:e})")]
    NoConvergence { evals: usize, spread: f64 },

    #[error("generated operator has 0 in the closure of its numerical range")]
    ZeroInFov,

    #[error("problem generation failed: {0}")]
    Generation(String),

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 is a usage/input problem, 2 a numerical failure, 3 a violated bound.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NearSingular { .. }
            | Error::NoConvergence { .. }
            | Error::ZeroInFov
            | Error::Generation(_) => 2,
            Error::BoundViolation(_) => 3,
            _ => 1,
        }
    }
}
