use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("stage error: expected a stage-{expected} checkpoint, found stage {found}")]
    Stage { expected: u8, found: u8 },
    #[error("integrity error in {member}: {reason}")]
    Integrity { member: String, reason: String },
    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("config mismatch: {}", .0.join(", "))]
    ConfigDiff(Vec<String>),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
