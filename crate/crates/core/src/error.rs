use thiserror::Error;

use crate::spectral::Grid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: Grid, found: Grid },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("spectrum violates real-output symmetry at coefficient {position} (defect {defect:e})")]
    NotHermitian { position: usize, defect: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("filter log-multiplier {value} at mode {index} outside [-{limit}, {limit}]")]
    FilterRange { index: usize, value: f64, limit: f64 },
    #[error("inverse did not converge for target {target} after {iterations} iterations")]
    InverseDidNotConverge { target: f64, iterations: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training ended above its starting loss: initial {initial}, final {last}")]
    LossIncreased { initial: f64, last: f64 },
    #[error("solver blow-up at step {step}: {reason}")]
    SolverBlowUp { step: usize, reason: String },
    #[error("CFL number {cfl:.3} exceeds limit {limit} at step {step}")]
    Cfl { step: usize, cfl: f64, limit: f64 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::LossIncreased { .. }
                | Error::SolverBlowUp { .. }
                | Error::Cfl { .. }
                | Error::InverseDidNotConverge { .. }
        )
    }
}
