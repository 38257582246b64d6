use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Machine-readable reason attached to a rejected priming request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimingViolation {
    FidelityMismatch,
    ThreadIsolation,
    InitMismatch,
    ModelConfigMismatch,
}

impl PrimingViolation {
    pub fn code(self) -> &'static str {
        match self {
            PrimingViolation::FidelityMismatch => "fidelity-mismatch",
            PrimingViolation::ThreadIsolation => "thread-isolation",
            PrimingViolation::InitMismatch => "init-mismatch",
            PrimingViolation::ModelConfigMismatch => "model-config-mismatch",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("no active dimensions")]
    NoActiveDimensions,
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("duplicate dimension `{0}`")]
    DuplicateDimension(String),
    #[error("invalid dimension `{name}`: {reason}")]
    InvalidDimension { name: String, reason: String },
    #[error("dimension `{0}` is frozen")]
    FrozenDimension(String),
    #[error("categorical dimension `{0}` cannot be widened")]
    CategoricalWiden(String),
    #[error("need at least {needed} completed trials, have {available}")]
    InsufficientTrials { needed: usize, available: usize },
    #[error("insufficient history")]
    InsufficientHistory,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ill-conditioned kernel")]
    IllConditioned,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{message}")]
    Priming {
        violation: PrimingViolation,
        message: String,
    },
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("objective failed: {0}")]
    Objective(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_dim(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidDimension {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn priming(violation: PrimingViolation, message: impl Into<String>) -> Self {
        Error::Priming {
            violation,
            message: message.into(),
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}
