use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("malformed weight blob: {0}")]
    Blob(String),

    #[error("weight tensor `{0}` is missing")]
    MissingWeight(String),

    #[error("weight tensor `{0}` is defined more than once")]
    DuplicateWeight(String),

    #[error("weight `{name}` differs between manifest and blob: {msg}")]
    WeightMismatch { name: String, msg: String },

    #[error("shape error at node {node}: {msg}")]
    Shape { node: usize, msg: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shapes have not been inferred")]
    ShapesNotInferred,

    #[error("implementation `{0}` is already registered")]
    DuplicateImpl(String),

    #[error("unknown implementation `{0}`")]
    UnknownImpl(String),

    #[error("node {0} has no implementation assigned")]
    Unassigned(usize),

    #[error("implementation `{impl_id}` cannot run node {node}: {msg}")]
    IncompatibleImpl {
        node: usize,
        impl_id: String,
        msg: String,
    },

    #[error("layout mismatch at node {node}: expected {expected:?}, got {actual:?}")]
    LayoutMismatch {
        node: usize,
        expected: crate::graph::Layout,
        actual: crate::graph::Layout,
    },

    #[error("input tensor mismatch: {0}")]
    InputMismatch(String),

    #[error("quantization: {0}")]
    Quant(String),

    #[error("search: {0}")]
    Search(String),

    #[error("search space of {0} assignments exceeds the brute-force bound of {1}")]
    SpaceTooLarge(u128, u128),

    #[error("wav: {0}")]
    Wav(#[from] WavError),

    #[error("audio: {0}")]
    Audio(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("workflow: {0}")]
    Workflow(String),

    #[error("invalid architecture spec: {0}")]
    Arch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Distinct failure modes of WAV ingestion.
#[derive(Debug, Error)]
pub enum WavError {
    #[error("expected mono audio, found {0} channels")]
    Channels(u16),
    #[error("expected 16000 Hz, found {0} Hz")]
    SampleRate(u32),
    #[error("expected 16-bit integer PCM, found {0}")]
    Format(String),
    #[error("truncated or corrupt file: {0}")]
    Truncated(String),
    #[error("clip is {0} samples long, longer than one second")]
    TooLong(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
