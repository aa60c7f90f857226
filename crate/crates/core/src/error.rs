use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A mixture class received (numerically) zero total predicted mass.
    #[error("degenerate class {class}: total predicted mass {mass:.3e}")]
    DegenerateClass { class: usize, mass: f64 },

    /// Input to the two-component mixture fit carries no information.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A loss or gradient became NaN/Inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// File format violation while reading datasets or checkpoints.
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
