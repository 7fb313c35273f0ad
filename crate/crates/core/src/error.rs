use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("reference signal is constant (zero variance after mean removal)")]
    ConstantReference,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty reference transcript")]
    EmptyReference,

    #[error("bad magic in {kind} file: expected {expected:?}")]
    BadMagic { kind: &'static str, expected: &'static str },

    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version { kind: &'static str, found: u32, expected: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing path: {0}")]
    MissingPath(String),

    #[error("label normalization: {0}")]
    Normalization(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// True for failures caused by NaN/inf during optimisation.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
