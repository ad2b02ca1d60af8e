use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("bad magic: expected \"DPT1\"")]
    BadMagic,

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("truncated file: {0}")]
    Truncated(&'static str),

    #[error("payload length mismatch: header declares {expected} elements, payload holds {actual}")]
    PayloadMismatch { expected: usize, actual: usize },

    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),

    #[error("non-finite element at flat index {0}")]
    NonFinite(usize),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch in {}: expected {expected:?}, found {actual:?}", .file.display())]
    ShapeMismatch { file: PathBuf, expected: Vec<usize>, actual: Vec<usize> },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("duplicate class_id {0}")]
    DuplicateClass(i64),

    #[error("split overlap: class {0} is listed as both seen and unseen")]
    SplitOverlap(i64),

    #[error("granularity count mismatch: {0}")]
    GranularityCount(String),

    #[error("empty description")]
    EmptyDescription,

    #[error("zero-norm vector at class {class_id}, granularity \"{granularity}\"")]
    ZeroNorm { class_id: i64, granularity: String },

    #[error("unknown granularity label \"{0}\"")]
    UnknownGranularity(String),

    #[error("unknown class {0}")]
    UnknownClass(i64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("class {0} is not a seen class")]
    ClassNotSeen(i64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite adaptation loss at step {0}")]
    NonFiniteAdaptation(usize),

    #[error("invalid static partition: {0}")]
    Partition(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("refusing to overwrite non-empty directory {} (pass --force)", .0.display())]
    UnsafeOverwrite(PathBuf),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for the command-line tool.
    ///
    /// 0 success, 1 other, 2 usage, 3 unsafe overwrite, 4 protocol violation,
    /// 5 data corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnsafeOverwrite(_) => 3,
            Error::Protocol(_) => 4,
            Error::BadMagic
            | Error::UnknownDtype(_)
            | Error::Truncated(_)
            | Error::PayloadMismatch { .. }
            | Error::ZeroExtent(_)
            | Error::NonFinite(_) => 5,
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
