use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("container: {0}")]
    Container(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    /// An upstream artifact is absent; the message names the command that
    /// produces it.
    #[error("{0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Core(#[from] orion_core::OrionError),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        LabError::Json { path: path.into(), source }
    }

    /// CLI exit code: 2 for validation failures, 3 for missing upstream
    /// artifacts, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Validation(_) | LabError::Config(_) => 2,
            LabError::MissingArtifact(_) => 3,
            _ => 1,
        }
    }
}
