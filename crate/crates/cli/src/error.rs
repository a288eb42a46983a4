use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    ConfigKey { path: PathBuf, line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mmce_core::Error),

    #[error("holdout is not eligible for evaluation (use --force to override): {}", .0.join("; "))]
    Ineligible(Vec<String>),
}

impl CliError {
    /// 0 ok, 2 config/validation, 3 I/O, 4 numeric, 5 eligibility.
    pub fn exit_code(&self) -> u8 {
        use mmce_core::Error as E;
        match self {
            CliError::ConfigKey { .. } | CliError::Config(_) => 2,
            CliError::Ineligible(_) => 5,
            CliError::Core(e) => match e {
                E::Io { .. } => 3,
                E::Numeric { .. } => 4,
                E::Config(_) | E::Usage(_) | E::Domain(_) | E::Validation(_) | E::TooLarge(_) | E::Parse { .. } => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
