use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data does not satisfy an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A scalar argument lies outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A freeze-schedule or stage-ordering contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged in {stage} at epoch {epoch}, step {step}: {message}")]
    Training {
        stage: String,
        epoch: usize,
        step: usize,
        message: String,
    },

    /// Failure inside one step of a run, tagged with that step.
    #[error("[{stage}] {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("PNG error: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
