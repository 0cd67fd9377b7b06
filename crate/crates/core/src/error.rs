use std::path::PathBuf;

use thiserror::Error;

use crate::data::Violation;

#[derive(Debug, Error)]
pub enum VipError {
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json error in {context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("load error: {0}")]
    Load(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("clip failed validation with {} violation(s): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("inference error: {0}")]
    Inference(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite loss term `{term}` at epoch {epoch}, step {step} (value {value})")]
    NonFinite { term: String, epoch: usize, step: usize, value: f64 },
}

fn summarize(v: &[Violation]) -> String {
    v.iter().take(3).map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl VipError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json { context: context.into(), source }
    }

    /// True for errors caused by user input rather than internal failures.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Self::Io { .. } | Self::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, VipError>;
