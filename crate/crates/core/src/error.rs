use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("context of {len} tokens exceeds the window of {limit}")]
    ContextTooLong { len: usize, limit: usize },
    #[error("invalid decode state: {0}")]
    InvalidState(String),
    #[error("no valid candidate: every continuation is masked")]
    NoValidCandidate,
    #[error("id mismatch: {0}")]
    IdMismatch(String),
    #[error("duplicate source_id {0:?} in predictions")]
    DuplicateId(String),
    #[error("need at least 2 runs per side, got {a} and {b}")]
    InsufficientRuns { a: usize, b: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("missing resource: {0}")]
    MissingResource(String),
    #[error("cannot align tail with parse: {0}")]
    AlignmentFailure(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("upstream artifact changed since it was produced: {0}")]
    UpstreamStale(String),
    #[error("model serialization: {0}")]
    Serialization(#[from] bincode::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }
}
