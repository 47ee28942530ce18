use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error(
        "grid alignment error: micro resolution {micro} does not match cell resolution {cell}"
    )]
    Alignment { micro: usize, cell: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible charge data: bulk plus boundary charge sums to {residual:e} (tolerance {tolerance:e})")]
    Incompatible { residual: f64, tolerance: f64 },

    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error("negative concentration {min:e} for species {species} at dt = {dt:e}")]
    NegativeConcentration { species: usize, min: f64, dt: f64 },

    #[error("time step fell below the floor {floor:e} at t = {t}")]
    StepFloor { t: f64, floor: f64 },

    #[error("state corruption: compatibility residual {residual:e} exceeds {tolerance:e}")]
    StateCorruption { residual: f64, tolerance: f64 },

    #[error("expression error in `{source_text}`: {message}")]
    Expression {
        source_text: String,
        message: String,
    },

    #[error("harness error: {0}")]
    Harness(String),

    #[error("verification failure: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure of an iterative linear solve.
#[derive(Debug, Clone, Error)]
pub enum SolverError {
    #[error(
        "{method} did not converge in {iterations} iterations (relative residual {residual:e})"
    )]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("{method} broke down at iteration {iterations} (relative residual {residual:e})")]
    Breakdown {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
}

impl SolverError {
    pub fn residual(&self) -> f64 {
        match self {
            SolverError::NotConverged { residual, .. }
            | SolverError::Breakdown { residual, .. } => *residual,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
