use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("brush texture `{0}` is not loaded")]
    MissingTexture(String),

    #[error("stroke has no samples")]
    EmptyStroke,

    #[error("{0}")]
    Invalid(String),

    #[error("empty region mask")]
    EmptyMask,

    #[error("history is empty")]
    EmptyHistory,

    #[error("unknown history entry {0}")]
    UnknownEntry(u64),

    #[error("no intent provider configured")]
    NoIntent,

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
