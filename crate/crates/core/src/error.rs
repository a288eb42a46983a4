use std::path::PathBuf;

/// Errors produced anywhere in the modeling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, arities or hyperparameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// API used out of order (e.g. backward before forward).
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values or degenerate numeric inputs.
    #[error("numeric error{}: {message}", group.as_ref().map(|g| format!(" in group `{g}`")).unwrap_or_default())]
    Numeric {
        group: Option<String>,
        message: String,
    },

    /// Argument outside a function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data violating a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Brute-force instance exceeds the enumeration guard.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// Malformed file contents.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            group: None,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
