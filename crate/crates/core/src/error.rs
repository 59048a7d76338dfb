use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BslError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BslError {
    /// An image axis is not a multiple of the requested block side.
    #[error("{axis} of {size} px is not divisible by block size {block}")]
    NotDivisible {
        axis: &'static str,
        size: usize,
        block: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes that should agree do not (ragged grids, mismatched head outputs, ...).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("failed to write checkpoint {path}: {source}")]
    CheckpointWrite {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BslError {
    /// True for errors caused by user-supplied configuration rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            BslError::Config(_) | BslError::Validation(_) | BslError::NotDivisible { .. }
        )
    }
}
