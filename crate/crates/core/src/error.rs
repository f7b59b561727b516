use thiserror::Error;

/// Errors raised across the detection, training and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("search space too large: {candidates} candidates exceeds limit {limit}")]
    SearchSpaceTooLarge { candidates: f64, limit: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("model does not match experiment: {0}")]
    ModelMismatch(String),

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, losses: Vec<f64> },

    #[error("detector failed at trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from bad user input (exit code 1) rather
    /// than a failure while running (exit code 2).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::Format(_)
            | Error::ModelMismatch(_)
            | Error::Json(_)
            | Error::Io { .. } => true,
            Error::Trial { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
