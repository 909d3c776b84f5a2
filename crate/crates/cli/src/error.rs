use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),

    #[error("bad spec `{spec}`: {msg}")]
    Spec { spec: String, msg: String },

    #[error("unknown experiment `{name}`; available: {available}")]
    UnknownExperiment { name: String, available: String },

    #[error(transparent)]
    Numerics(#[from] aggdiff::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn spec_error(spec: &str, msg: impl Into<String>) -> CliError {
    CliError::Spec { spec: spec.to_string(), msg: msg.into() }
}
