use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SdrError>;

#[derive(Debug, Error)]
pub enum SdrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-binary treatment at row {row}")]
    NonBinaryTreatment { row: usize },

    #[error(
        "balancing loss appears unbounded below (arm {arm}): objective {objective:.4e} still \
         decreasing with l1 norm {l1_norm:.3e}; the arm is likely separable from the rest of the fold"
    )]
    Separation {
        arm: u8,
        objective: f64,
        l1_norm: f64,
    },

    #[error("fold split left arm {arm} empty in a fold after {attempts} attempts")]
    EmptyArmInFold { arm: u8, attempts: usize },

    #[error("estimated propensity is numerically 0 or 1 at row {row}")]
    DegeneratePropensity { row: usize },

    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SdrError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SdrError::InvalidInput(msg.into())
    }

    /// Validation errors map to exit code 1, estimator failures to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SdrError::InvalidInput(_)
                | SdrError::Parse { .. }
                | SdrError::NonBinaryTreatment { .. }
                | SdrError::Schema { .. }
                | SdrError::Io(_)
                | SdrError::Json(_)
                | SdrError::Csv(_)
        )
    }
}
