use exaddis_core::{ConfigError, Violation};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("no session '{0}'")]
    NotFound(String),
    #[error("session '{id}' is quarantined: {reason}")]
    Quarantined { id: String, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("p-value {0} outside [0, 1]")]
    PValueRange(f64),
    #[error("step {step}: {violation}")]
    Inadmissible { step: usize, violation: Violation },
    #[error("sequence number {seq} was already used with a different p-value")]
    SequenceConflict { seq: u64 },
    #[error("sequence number {seq} skips ahead; next expected is {expected}")]
    SequenceGap { seq: u64, expected: u64 },
    #[error("storage: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Quarantined { .. } => "quarantined",
            ServiceError::Config(_) => "invalid_config",
            ServiceError::PValueRange(_) => "invalid_p_value",
            ServiceError::Inadmissible { .. } => "inadmissible",
            ServiceError::SequenceConflict { .. } => "sequence_conflict",
            ServiceError::SequenceGap { .. } => "sequence_gap",
            ServiceError::Storage(_) => "storage",
        }
    }

    pub fn constraint(&self) -> Option<&'static str> {
        match self {
            ServiceError::Config(e) => e.constraint(),
            ServiceError::Inadmissible { violation, .. } => Some(violation.constraint.name()),
            ServiceError::PValueRange(_) => Some("p_range"),
            _ => None,
        }
    }

    /// HTTP status for the error.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) => 404,
            ServiceError::Quarantined { .. } => 409,
            ServiceError::Config(_) | ServiceError::PValueRange(_) | ServiceError::Inadmissible { .. } => 422,
            ServiceError::SequenceConflict { .. } | ServiceError::SequenceGap { .. } => 409,
            ServiceError::Storage(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            constraint: self.constraint().map(str::to_string),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constraint: Option<String>,
}
