use thiserror::Error;

/// Errors produced while building operators, evaluating maps or running experiments.
#[derive(Debug, Error)]
pub enum SrpError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} needs {bytes} bytes, exceeding the configured cap of {cap} bytes")]
    Capacity { what: &'static str, bytes: u128, cap: u128 },

    #[error("frame {frame} out of range ({frames} frames available)")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("invalid rank {rank}: must lie in 1..={max}")]
    InvalidRank { rank: usize, max: usize },

    #[error("invalid sparsity {nnz}: must lie in 0..={max}")]
    InvalidSparsity { nnz: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("reference has zero norm; relative error is undefined")]
    UndefinedReference,

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error("operator cache format error: {0}")]
    Format(String),

    #[error("cache does not match configuration: {0}")]
    CacheMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SrpError> = std::result::Result<T, E>;
