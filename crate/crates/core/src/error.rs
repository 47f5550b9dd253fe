use std::path::PathBuf;

/// Errors produced by the evaluation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("raw class id {0} is not present in the class map")]
    UnknownRawClass(u32),

    #[error("invalid class map: {0}")]
    InvalidClassMap(String),

    #[error("point count mismatch: ground truth has {gt} points, prediction has {pred}")]
    LengthMismatch { gt: usize, pred: usize },

    #[error("instance id {0} does not fit the packed label encoding (max 999)")]
    InstanceOutOfRange(u32),

    #[error("no class is present in the evaluated split")]
    NoPresentClasses,

    #[error(
        "frame count mismatch in sequence {sequence}: ground truth has {gt}, prediction has {pred}"
    )]
    FrameCountMismatch {
        sequence: String,
        gt: usize,
        pred: usize,
    },

    #[error("invalid scenario plan: {0}")]
    InvalidPlan(String),

    #[error("invalid frame permutation: {0}")]
    BadPermutation(String),

    #[error("frame {frame} is outside the presence [{first}, {last}] of track {track}")]
    OutOfRangeFrame {
        track: u32,
        frame: usize,
        first: usize,
        last: usize,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("unknown track id {0}")]
    UnknownTrack(u32),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("scan token mismatch in sequence {sequence}: {detail}")]
    TokenMismatch { sequence: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: file size {len} is not a multiple of {record} bytes")]
    Truncated {
        path: PathBuf,
        len: usize,
        record: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
