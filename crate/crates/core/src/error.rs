use thiserror::Error;

/// Errors raised anywhere in the control stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("input error at line {line}: {message}")]
    Input { line: usize, message: String },

    #[error("identification failed: {0}")]
    Identification(String),

    #[error("training diverged ({stage}, {at}): {message}")]
    Training {
        stage: &'static str,
        at: String,
        message: String,
    },

    #[error("missing prerequisite: {missing} (run the `{recipe}` recipe first)")]
    MissingPrerequisite { missing: String, recipe: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn training(stage: &'static str, at: impl ToString, message: impl Into<String>) -> Self {
        Error::Training {
            stage,
            at: at.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn input(line: usize, message: impl Into<String>) -> Self {
        Error::Input {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
