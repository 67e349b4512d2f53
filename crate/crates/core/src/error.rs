use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}: not a tensor file")]
    BadMagic(PathBuf),
    #[error("truncated tensor file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("unknown dtype code 0x{0:02X}")]
    UnknownDtype(u8),
    #[error("tensor shape overflows addressable size: {0:?}")]
    ShapeOverflow(Vec<u64>),
    #[error("invalid tensor shape {0:?}: rank must be 1..=4 with positive dims")]
    InvalidShape(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("payload length {found} does not match shape (expected {expected})")]
    PayloadMismatch { expected: usize, found: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("dataset entry `{entry}`: expected shape {expected:?}, found {found:?}")]
    DimensionMismatch {
        entry: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("dataset entry `{entry}` references missing file {path}")]
    MissingTensor { entry: String, path: PathBuf },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("refined importances sum to zero; normalization is degenerate")]
    DegenerateNormalization,
    #[error("mask must contain at least one true and one false cell")]
    DegenerateMask,
    #[error("none of the requested words has a recorded similarity row")]
    NoSignal,
    #[error("projector index {index} out of range for {rows} source rows")]
    ProjectorIndex { index: usize, rows: usize },
    #[error("objective returned a non-finite value while perturbing `{param}`[{index}]")]
    NonFiniteObjective { param: String, index: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("linear probe needs at least two classes in the training split")]
    SingleClass,
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
