use carnot_core::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },

    #[error("unknown recipe `{0}` (see `carnot list`)")]
    UnknownRecipe(String),

    #[error(transparent)]
    Engine(#[from] EngineError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("output error: {0}")]
    Output(String),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl CliError {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            name,
            reason: reason.into(),
        }
    }

    /// 2 for rejected input, 3 for numeric failure, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid { .. } | CliError::UnknownRecipe(_) => 2,
            CliError::Engine(e) if e.is_numeric() => 3,
            CliError::Engine(EngineError::Io(_) | EngineError::Csv(_) | EngineError::Json(_)) => 1,
            CliError::Engine(_) => 2,
            CliError::Io(_) | CliError::Output(_) => 1,
        }
    }
}
