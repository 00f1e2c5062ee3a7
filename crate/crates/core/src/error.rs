use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid disorder spec: {0}")]
    InvalidSpec(String),

    #[error("invalid activation: {0}")]
    InvalidActivation(String),

    #[error("enumeration cap exceeded: n = {n} > cap = {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("partition function is zero: {0}")]
    EmptySolutionSet(String),

    #[error("conditioning event never occurred: {0}")]
    ConditioningEmpty(String),

    #[error("retries exhausted after {attempts} attempts: {detail}")]
    RetriesExhausted { attempts: usize, detail: String },

    #[error("certificate check failed: {0}")]
    Certification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit code used by the `plab` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_)
            | LabError::InvalidSpec(_)
            | LabError::InvalidActivation(_)
            | LabError::Domain(_)
            | LabError::Shape(_) => 2,
            LabError::CapExceeded { .. } => 3,
            LabError::ConditioningEmpty(_) | LabError::EmptySolutionSet(_) => 4,
            LabError::Certification(_) | LabError::RetriesExhausted { .. } => 5,
            LabError::Io(_) | LabError::Json(_) => 1,
        }
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Domain(msg.into()))
}
