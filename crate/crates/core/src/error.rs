use thiserror::Error;

/// Errors raised by measures, estimators, checks and the runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("potential `{name}` rejected: {reason}")]
    Potential { name: String, reason: String },

    #[error("sampler quality check failed: {0}")]
    SamplerQuality(String),

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bisection bracket failure: {0}")]
    Bracket(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("backend mismatch: {0}")]
    Backend(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("experiment `{label}`, check `{check}`: {source}\nconfig: {config}")]
    Check {
        label: String,
        check: String,
        source: Box<Error>,
        config: String,
    },

    #[error("malformed report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
