use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: required column {column:?} not found in header")]
    Schema { column: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dim {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("checkpoint error: {message}{}", format_names(.names))]
    Checkpoint {
        message: String,
        names: Vec<String>,
    },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("model error ({kind}): {message}")]
    Model { kind: String, message: String },

    #[error("training aborted at step {step} (lr {lr:.3e}): {message}; batch ids {batch_ids:?}")]
    Training {
        step: usize,
        lr: f64,
        message: String,
        batch_ids: Vec<String>,
    },
}

fn format_names(names: &[String]) -> String {
    if names.is_empty() {
        String::new()
    } else {
        format!(" [{}]", names.join(", "))
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dim {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn model(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Model {
            kind: kind.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
