//! Errors reported as one JSON object on stderr.

use serde::Serialize;

/// Where a failure happened. Config failures occur before any output is
/// written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Run,
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn config(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            stage: Stage::Config,
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    pub fn run(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            stage: Stage::Run,
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    pub fn from_config(e: adaprompt::Error) -> Self {
        Self::config(e.kind(), e.to_string())
    }

    pub fn from_run(e: adaprompt::Error) -> Self {
        Self::run(e.kind(), e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => 2,
            Stage::Run => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::run("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::run("json", e.to_string())
    }
}
