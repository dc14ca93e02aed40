use thiserror::Error;

/// Errors produced anywhere in the tomography pipeline.
#[derive(Debug, Error)]
pub enum QdtError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("unsupported basis ordering: {0}")]
    UnsupportedOrdering(String),
    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    SymmetryViolation(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid amplitude: {0}")]
    InvalidAmplitude(String),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid measurement record: {0}")]
    InvalidRecord(String),
    #[error("parameters not identifiable: {0}")]
    NotIdentifiable(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("kernel needs a rough estimate: {0}")]
    MissingContext(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not computable: {0}")]
    NotComputable(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("no convergence after {iterations} iterations (certificate gap {gap:.3e})")]
    ConvergenceFailure {
        iterations: usize,
        gap: f64,
        best: Vec<f64>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QdtError {
    /// Stable machine-readable tag, used in CLI error JSON and the C API.
    pub fn code(&self) -> &'static str {
        match self {
            QdtError::InvalidDimension(_) => "invalid-dimension",
            QdtError::UnsupportedOrdering(_) => "unsupported-ordering",
            QdtError::SymmetryViolation(_) => "symmetry-violation",
            QdtError::Shape(_) => "shape-error",
            QdtError::NotFound(_) => "not-found",
            QdtError::InvalidAmplitude(_) => "invalid-amplitude",
            QdtError::InvalidDistribution(_) => "invalid-distribution",
            QdtError::InvalidRecord(_) => "invalid-record",
            QdtError::NotIdentifiable(_) => "not-identifiable",
            QdtError::InvalidKernel(_) => "invalid-kernel",
            QdtError::MissingContext(_) => "missing-context",
            QdtError::InvalidConfig(_) => "invalid-config",
            QdtError::NotComputable(_) => "not-computable",
            QdtError::NotApplicable(_) => "not-applicable",
            QdtError::ConvergenceFailure { .. } => "convergence-failure",
            QdtError::Io(_) => "io-error",
            QdtError::Json(_) => "json-error",
            QdtError::Csv(_) => "csv-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, QdtError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> QdtError {
    QdtError::Shape(msg.into())
}
