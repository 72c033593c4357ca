use serde_json::{json, Value};
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stochmor::Error),

    #[error("{0}")]
    Usage(String),

    /// Algorithm and model kind do not fit together.
    #[error("{0}")]
    Incompatible(String),

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Incompatible(_) => "validation",
            CliError::Csv(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `{"error": {"kind", "message", "violations"?}}`
    pub fn record(&self) -> Value {
        let mut inner = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Core(stochmor::Error::Validation(v)) = self {
            inner["violations"] = serde_json::to_value(v).unwrap_or(Value::Null);
        }
        json!({ "error": inner })
    }
}
