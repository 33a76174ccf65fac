use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {block} evaluation")]
    Evaluation { block: &'static str },

    #[error("non-invertible flux Jacobian: eigenvalue {eigenvalue:e} violates the nonzero-speed hypothesis")]
    NonInvertibleFluxJacobian { eigenvalue: f64 },

    #[error("non-diagonalizable interface state: {detail}")]
    NonDiagonalizable { detail: String },

    #[error("stationary initial data: maximum wave speed is zero")]
    StationaryData,

    #[error("inadmissible state in cell {cell} at t = {time}: {detail}")]
    Inadmissible {
        cell: usize,
        time: f64,
        detail: String,
    },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite gradient at iteration {iteration}, cell {cell}")]
    NonFiniteGradient { iteration: usize, cell: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

pub type Result<T> = std::result::Result<T, Error>;
