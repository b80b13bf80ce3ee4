use thiserror::Error;

/// Errors produced by the codec, the localizers and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),

    #[error("dimension overflow")]
    DimensionOverflow,

    #[error("nonzero padding bits in final byte")]
    NonzeroPadding,

    #[error("value {value} at element {index} is not representable as f32")]
    OutOfRange { index: usize, value: f64 },

    #[error("non-finite value at element {0}")]
    NotFinite(usize),

    #[error("non-binary value {value} at element {index}")]
    NotBinary { index: usize, value: u8 },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("repeat factors do not fit shape: {0}")]
    FactorMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("level {level} has {have} samples, need at least {need}")]
    InsufficientSamples {
        level: usize,
        have: usize,
        need: usize,
    },

    #[error("auc undefined: ground truth contains a single class")]
    UndefinedAuc,

    #[error("invalid key: {0}")]
    InvalidKey(String),
}

pub type Result<T> = std::result::Result<T, Error>;
