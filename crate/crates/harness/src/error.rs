use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] oar_core::env::EnvError),
    #[error(transparent)]
    Episode(#[from] Box<oar_core::env::EpisodeError>),
    #[error(transparent)]
    Agent(#[from] oar_core::agent::AgentError),
    #[error(transparent)]
    Augment(#[from] oar_core::augment::AugmentError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("incomplete report in {dir}; missing: {}", .missing.join(", "))]
    IncompleteReport { dir: PathBuf, missing: Vec<String> },
    #[error("{0}")]
    Plot(String),
    #[error("malformed report: {0}")]
    Report(String),
}

impl HarnessError {
    /// 2 for usage or configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
