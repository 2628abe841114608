use thiserror::Error;

/// Errors produced by the simulation and separation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("sample rate mismatch: {a} Hz vs {b} Hz")]
    SampleRateMismatch { a: u32, b: u32 },

    #[error("frame parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal has zero energy: {0}")]
    ZeroEnergy(String),

    #[error("scenario sampling failed: {0}")]
    Sampling(String),

    #[error("position outside room: {0}")]
    OutsideRoom(String),

    #[error("no usable channel: {0}")]
    NoUsableChannel(String),

    #[error("frequency bin {bin} has zero mask mass")]
    DegenerateFrequency { bin: usize },

    #[error("matrix is singular after diagonal loading at bin {bin}")]
    SingularCovariance { bin: usize },

    #[error("non-Hermitian matrix: asymmetry {asymmetry:.3e} exceeds tolerance")]
    NotHermitian { asymmetry: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Format(String),

    #[error("experiment produced no usable scenarios: {0}")]
    AllScenariosFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
