use std::path::Path;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{source_name}, line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] svine::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn parse(source: &str, line: usize, message: impl Into<String>) -> Self {
        CliError::Parse {
            source_name: source.to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn csv(e: csv::Error) -> Self {
        CliError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Core(e) => e.kind(),
        }
    }

    /// 1 for invalid invocations, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Parse { line, .. } = self {
            v["line"] = json!(line);
        }
        v.to_string()
    }
}
