//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, fitting and the evaluation harness.
#[derive(Error, Debug)]
pub enum TdxError {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario file failed validation.
    #[error("invalid scenario: {0}")]
    ScenarioValidation(String),

    /// Not enough observations for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Two curves were combined but their grids differ.
    #[error("grid mismatch: left has {left} points, right has {right} points")]
    GridMismatch { left: usize, right: usize },

    /// A persisted file (model, scenario, config) does not match its schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A non-finite value appeared while evaluating the likelihood.
    #[error("numerical overflow while evaluating sample {sample}")]
    NumericalOverflow { sample: usize },

    /// The line search could not find a finite, acceptable step.
    #[error("line search failed to make progress")]
    LineSearchFailure,

    /// Every optimizer start failed.
    #[error("fit failed for all starts: {diagnostics}")]
    FitFailure { diagnostics: String },

    /// Every grid cell of a hyperparameter search failed.
    #[error("model selection failed: {0}")]
    SelectionFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TdxError {
    /// Process exit code for the CLI: 2 for validation problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            TdxError::NumericalOverflow { .. }
            | TdxError::LineSearchFailure
            | TdxError::FitFailure { .. }
            | TdxError::SelectionFailure(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, TdxError>;
