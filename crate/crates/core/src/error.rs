use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed layout token `{0}`")]
    MalformedToken(String),
    #[error("duplicate index {0} in layout")]
    DuplicateIndex(usize),
    #[error("layout mixes SO(3) `e` and SO(2) `m` suffixes")]
    MixedSuffix,
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("direction must be a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("zero-length direction")]
    ZeroDirection,
    #[error("degree {degree} exceeds cap {cap}")]
    DegreeOverCap { degree: usize, cap: usize },
    #[error("triangle rule violated for ({0}, {1}, {2})")]
    Triangle(usize, usize, usize),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("unknown element Z={0}")]
    UnknownElement(u32),
    #[error("distance {0} outside (0, cutoff]")]
    DistanceOutOfRange(f64),
    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("rejection sampling failed after {0} attempts")]
    SamplingFailed(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("matrix file: {0}")]
    MatrixFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
