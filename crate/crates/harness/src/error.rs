use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] courtcast::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    /// Training produced a non-finite loss; the last finite parameters are kept.
    #[error("{model} diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        model: String,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("leakage: {0} test windows also appear in the training input")]
    Leakage(usize),
}

impl HarnessError {
    pub fn config(path: &std::path::Path, message: impl Into<String>) -> Self {
        HarnessError::Config {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
