use thiserror::Error;

use crate::polymat::NormCertificate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty window")]
    EmptyWindow,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("entry {index} of the input violates the declared bound: {reason}")]
    BoundViolation { index: usize, reason: String },

    #[error("inadmissible input #{index}: {reason}")]
    InadmissibleInput { index: usize, reason: String },

    #[error("echo state precondition violated: certified sup norm {upper} is not below 1 - eps = {limit}")]
    NotContractive { upper: f64, limit: f64 },

    #[error("composed system failed recertification (M_p upper = {})", .certificate.m_p_upper)]
    Recertification { certificate: Box<NormCertificate> },

    #[error("normal equations are ill-conditioned (condition estimate {condition:.3e}); use a positive ridge parameter")]
    IllConditioned { condition: f64 },

    #[error("sequences indistinguishable at this resolution")]
    Indistinguishable,

    #[error("simulation budget of {0} exhausted")]
    BudgetExhausted(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
