use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible at stage `{stage}`: {reason}")]
    Infeasible { stage: String, reason: String },

    #[error("curve fit failed: {0}")]
    FitFailed(String),

    #[error("oracle instance too large: {0}")]
    OracleCap(String),
}

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.to_string(), reason: reason.into() }
    }

    pub fn infeasible(stage: &str, reason: impl Into<String>) -> Self {
        Error::Infeasible { stage: stage.to_string(), reason: reason.into() }
    }

    /// Stable CLI exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } => 3,
            Error::Io(_)
            | Error::Parse(_)
            | Error::Csv(_)
            | Error::InvalidConfig { .. }
            | Error::InvalidInput(_)
            | Error::FitFailed(_) => 2,
            Error::OracleCap(_) => 4,
        }
    }
}
