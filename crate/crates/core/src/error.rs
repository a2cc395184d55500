use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal of {len} samples is shorter than one frame ({frame_len} samples)")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero-energy input: {0}")]
    ZeroEnergy(String),

    #[error("delay of {delay} samples exceeds the frame support of {limit} samples")]
    DelayOutOfRange { delay: f64, limit: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("infeasible sampler configuration: {0}")]
    Infeasible(String),

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
