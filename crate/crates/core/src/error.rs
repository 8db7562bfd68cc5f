//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by dataset generation, training, evaluation, and the
/// experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A manifest or config field failed validation; names the field.
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    /// Inputs with incompatible shapes or lengths.
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch { context: String, detail: String },

    /// An operation received empty input where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Unknown architecture name; lists the registry.
    #[error("unknown architecture `{name}`; known: {known:?}")]
    UnknownArch { name: String, known: Vec<String> },

    /// A metric was asked for on degenerate data (e.g. single-class AUC).
    #[error("degenerate metric input: {0}")]
    DegenerateMetric(String),

    /// Training diverged (non-finite loss); carries diagnostics.
    #[error("training aborted at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    /// A required file is missing or unreadable.
    #[error("cannot load `{path}`: {reason}")]
    Load { path: PathBuf, reason: String },

    /// A persisted artifact failed format validation.
    #[error("corrupt artifact `{path}`: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    /// Unknown override key; lists the accepted keys.
    #[error("unknown config key `{key}`; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml write error: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
