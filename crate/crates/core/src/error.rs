use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"FGT1\", found {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("truncated tensor data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{0} trailing bytes after tensor payload")]
    TrailingBytes(usize),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("gram matrix is rank-deficient (min pivot {min_pivot:e}); use a positive ridge")]
    RankDeficient { min_pivot: f64 },

    #[error("optimisation diverged at epoch {epoch} (loss {loss}); try a smaller learning rate")]
    Divergence { epoch: usize, loss: f64 },

    #[error("no decoder for model `{0}`")]
    MissingDecoder(String),

    #[error("insufficient trajectory: selected steps {missing:?} never arrived")]
    InsufficientTrajectory { missing: Vec<usize> },

    #[error("records missing required steps: {0}")]
    MissingSteps(String),

    #[error("finite-difference jacobian of {rows}x{cols} exceeds the {limit} entry limit")]
    JacobianTooLarge { rows: usize, cols: usize, limit: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the filesystem rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
