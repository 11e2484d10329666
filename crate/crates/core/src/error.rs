use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("placement failure: could not place object {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::PlacementFailure { .. } | Error::InvalidAction(_) => 2,
            Error::Format(_) | Error::Json(_) | Error::ShapeMismatch(_) | Error::EmptyInput(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Io(_) => 3,
        }
    }

    /// Short machine-parsable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PlacementFailure { .. } => "placement_failure",
            Error::InvalidAction(_) => "invalid_action",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyInput(_) => "empty_input",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
