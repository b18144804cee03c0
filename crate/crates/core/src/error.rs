use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("layer {layer}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("layer {layer}: branching topology is not supported ({reason})")]
    Branching { layer: usize, reason: String },

    #[error("layer {layer}: non-finite current at time step {step}")]
    NonFiniteCurrent { layer: usize, step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("percentile must lie in (0, 1], got {0}")]
    InvalidPercentile(f64),

    #[error("layer {layer}: normalization scale {scale} is not positive")]
    DegenerateScale { layer: usize, scale: f64 },

    #[error("layer index {index} out of range (trace has {len} layers)")]
    LayerOutOfRange { index: usize, len: usize },

    #[error("neuron index {index} out of range (layer has {len} neurons)")]
    NeuronOutOfRange { index: usize, len: usize },

    #[error("vector is all zero after clamping; cannot form a distribution")]
    ZeroDistribution,

    #[error("kernel matrix is not positive definite after jitter escalation")]
    NotPositiveDefinite,

    #[error("objective evaluation failed at p = {p}: {source}")]
    Objective {
        p: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
