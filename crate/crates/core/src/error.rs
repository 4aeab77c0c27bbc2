use thiserror::Error;

/// Errors raised by the tomography library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("{what} index {index} out of range (have {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no single-overlap region on layer {layer} for direction {guide}")]
    NoSingleOverlapRegion { layer: usize, guide: usize },

    #[error("invalid turbulence parameters: {0}")]
    InvalidTurbulence(String),

    #[error("invalid solver configuration: {0}")]
    InvalidSolver(String),

    #[error("step size {step:.4e} violates the stability bound {limit:.4e}")]
    UnstableStep { step: f64, limit: f64 },

    #[error(
        "iteration diverged at step {iteration}: residual {residual:.4e} exceeds 10x the initial {initial:.4e}"
    )]
    Diverged {
        iteration: usize,
        residual: f64,
        initial: f64,
    },

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
