use thiserror::Error;

/// Errors raised across the solver. The CLI maps each variant to an exit code.
#[derive(Debug, Error)]
pub enum DppError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at round {round}, epoch {epoch}: {detail}")]
    Divergence {
        round: usize,
        epoch: usize,
        detail: String,
    },

    #[error("gauge error: {0}")]
    Gauge(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DppError {
    pub fn config(msg: impl Into<String>) -> Self {
        DppError::Config(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            DppError::Config(_) | DppError::LengthMismatch { .. } => 2,
            DppError::Divergence { .. } => 3,
            DppError::Gauge(_) | DppError::Oracle(_) => 4,
            DppError::Invariant(_) | DppError::Io(_) | DppError::Csv(_) | DppError::Json(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DppError::Config(_) => "config",
            DppError::Divergence { .. } => "divergence",
            DppError::Gauge(_) => "gauge",
            DppError::Oracle(_) => "oracle",
            DppError::Invariant(_) => "invariant",
            DppError::LengthMismatch { .. } => "length_mismatch",
            DppError::Io(_) => "io",
            DppError::Csv(_) => "csv",
            DppError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, DppError>;
