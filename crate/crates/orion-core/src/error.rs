use alloc::string::String;
use thiserror::Error;

/// Error taxonomy for the core crate. The lab crate adds IO and artifact
/// errors on top and owns the process exit-code mapping.
#[derive(Debug, Error)]
pub enum OrionError {
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error("model config: {0}")]
    Config(String),
    #[error("weights: {0}")]
    Weights(String),
    #[error("hook: {0}")]
    Hook(String),
    #[error("task: {0}")]
    Task(String),
    #[error("dataset validation failed: {0}")]
    Validation(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("intervention: {0}")]
    Intervention(String),
    #[error("oversight: {0}")]
    Oversight(String),
}

pub type Result<T> = core::result::Result<T, OrionError>;
