use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum MfpodError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("metric weight is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("metric weight is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("basis is not orthonormal under its metric (deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("invalid snapshot hierarchy: {0}")]
    SampleSharing(String),

    #[error("invalid allocation: {0}")]
    Allocation(String),

    #[error("matrix of size {size} exceeds the dense cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst_residual:e})")]
    NotConverged {
        iterations: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("singular system at row {row}")]
    Singular { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    #[error("corrupt snapshot file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("study aborted: {failed} of {total} repeats failed")]
    StudyAborted { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl MfpodError {
    /// Short machine-readable tag used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            MfpodError::DimensionMismatch { .. } => "dimension_mismatch",
            MfpodError::NotSymmetric { .. } => "not_symmetric",
            MfpodError::NotPositiveDefinite { .. } => "not_positive_definite",
            MfpodError::NotOrthonormal { .. } => "not_orthonormal",
            MfpodError::SampleSharing(_) => "sample_sharing",
            MfpodError::Allocation(_) => "allocation",
            MfpodError::SizeCap { .. } => "size_cap",
            MfpodError::NotConverged { .. } => "not_converged",
            MfpodError::Singular { .. } => "singular",
            MfpodError::InvalidParameter(_) => "invalid_parameter",
            MfpodError::InfeasibleBudget(_) => "infeasible_budget",
            MfpodError::CorruptFile { .. } => "corrupt_file",
            MfpodError::StudyAborted { .. } => "study_aborted",
            MfpodError::Io(_) => "io",
            MfpodError::Serialization(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, MfpodError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(MfpodError::DimensionMismatch { expected, got })
    }
}
