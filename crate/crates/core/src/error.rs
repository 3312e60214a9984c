use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented constraint.
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    /// Input outside the domain of a numerical routine (e.g. a non-SPD matrix).
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// Caller passed an argument outside the accepted range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Not enough data to form the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The forced-bridge sampler gave up on a unit interval.
    #[error("coupling failure on unit interval {interval}: {message}")]
    Coupling { interval: u64, message: String },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the configuration rather than by the run itself.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } => true,
            Error::Replicate { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
