use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset '{0}' (expected numerical-study, carousel or vendee)")]
    UnknownPreset(String),

    #[error("no-arrival: trace has no detectable first arrival")]
    NoArrival,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "SMO did not converge after {iterations} pair updates (max KKT violation {max_violation:e})"
    )]
    NonConvergence { iterations: usize, max_violation: f64 },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (config, data, arguments) as
    /// opposed to failures while running a computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_)
            | Error::Config(_)
            | Error::UnknownPreset(_)
            | Error::DimensionMismatch { .. }
            | Error::Parse { .. } => true,
            Error::NoArrival | Error::NonConvergence { .. } | Error::Io { .. } => false,
            Error::Stage { source, .. } => source.is_validation(),
        }
    }
}
