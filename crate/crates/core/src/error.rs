use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is not representable in {width}-bit {encoding} (range {min}..={max})")]
    OutOfRange {
        value: i64,
        width: u8,
        encoding: &'static str,
        min: i32,
        max: i32,
    },

    #[error("unsupported code width {0} (supported: 1..=8)")]
    UnsupportedWidth(u8),

    #[error("invalid {what}: {value} (expected a probability in [0, 1])")]
    InvalidRate { what: &'static str, value: f64 },

    #[error("invalid fault state {0} (expected -1, 0 or 1)")]
    InvalidFaultState(i64),

    #[error("sign-flip requires a two's complement layer")]
    UnsignedLayer,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("training did not reach the accuracy floor ({accuracy:.4} < {floor:.4})")]
    TrainingDiverged { accuracy: f64, floor: f64 },

    #[error("{scheme} layouts differ between direct and LUT search")]
    EngineMismatch { scheme: &'static str },

    #[error("malformed LUT file: {0}")]
    LutFormat(String),

    #[error("rate {rate}, trial {trial}, layer {layer}: {source}")]
    Trial {
        rate: f64,
        trial: usize,
        layer: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
