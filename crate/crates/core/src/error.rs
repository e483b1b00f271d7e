use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tone frequency {0} Hz is outside (0, 8000) Hz")]
    FrequencyAboveNyquist(f64),
    #[error("amplitude {0} exceeds 1.0")]
    AmplitudeOutOfRange(f64),
    #[error("background track has {0} samples, need at least 16000")]
    TrackTooShort(usize),
    #[error("clip lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("mixing volume {0} is outside [0, 1]")]
    VolumeOutOfRange(f64),
    #[error("expected a clip of {expected} samples, got {actual}")]
    WrongClipLength { expected: usize, actual: usize },
    #[error("feature matrix is already in temporal-conv layout")]
    AlreadyReshaped,
    #[error("feature layout does not match the network input layout")]
    LayoutMismatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("batchnorm evaluated without running statistics")]
    EvalWithoutStats,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any gradient-requiring leaf")]
    DetachedGraph,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("category {0} has no support embeddings")]
    EmptyCategory(usize),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("label {label} out of range for {categories} categories")]
    LabelOutOfRange { label: usize, categories: usize },
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
}
