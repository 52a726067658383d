use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("malformed file: {0}")]
    Format(String),

    /// Training diverged; carries the state at the failing step.
    #[error("numeric abort: {0}")]
    Numeric(Diagnostic),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Short machine-readable category, used by the CLI for exit lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::Param(_) | Error::Contract(_) => "usage",
            Error::NonFinite { .. } | Error::Numeric(_) => "numeric",
            Error::Generation(_) => "generation",
            Error::Format(_) | Error::Io(_) | Error::Json(_) => "io",
        }
    }
}

/// State dump attached to a diverged training run.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub phase: String,
    pub step: usize,
    pub detail: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} step {}: {}", self.phase, self.step, self.detail)
    }
}
