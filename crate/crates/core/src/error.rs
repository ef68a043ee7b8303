use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record could not be decoded. `line` is 1-based when known.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A geometry or dataset invariant does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A tensor op produced NaN or infinity.
    #[error("numeric error in {op}: non-finite value")]
    Numeric { op: &'static str },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown entity ids: {0:?}")]
    MissingIds(Vec<u64>),

    #[error("no usable windows: {0}")]
    NoUsableWindows(String),

    /// Attention needs at least two entities; callers skip such windows.
    #[error("window has {0} entities, at least 2 are required")]
    WindowTooSmall(usize),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors raised by the numeric core rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::NonFiniteGradient(_))
    }
}
