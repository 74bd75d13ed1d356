use idens_autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `row` counts data records from 1, the header excluded.
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("quadrature did not converge (residual estimate {residual:.3e})")]
    Quadrature { residual: f64 },

    #[error("{stage} diverged at iteration {iteration}")]
    Diverged { stage: String, iteration: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::InvalidInput(msg.into())
}
