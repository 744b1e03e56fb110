use std::path::PathBuf;

/// Errors shared across the data, clustering, forecasting and training
/// modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}: {detail}")]
    MalformedCsv { path: PathBuf, detail: String },

    #[error("series has no channels or no steps")]
    EmptySeries,

    #[error("split sizes {requested} exceed series length {available}")]
    SplitTooLarge { requested: usize, available: usize },

    #[error("{split} split has {steps} steps, too short for lookback {lookback} + horizon {horizon}")]
    SplitTooShort {
        split: &'static str,
        steps: usize,
        lookback: usize,
        horizon: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("patch length {patch_len} exceeds lookback {lookback}")]
    PatchTooLong { patch_len: usize, lookback: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("cluster count {requested} exceeds channel count {channels}")]
    TooManyClusters { requested: usize, channels: usize },

    #[error("cluster {cluster} has zero soft assignment mass")]
    DegenerateCluster { cluster: usize },

    #[error("k-means needs at least one point, got none")]
    NoPoints,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint {path} is not readable: {detail}")]
    BadCheckpoint { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
