use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error(transparent)]
    WeightFile(#[from] WeightFileError),

    #[error("no annotations for class `{0}`")]
    EmptyClass(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}; per-layer weight L2 norms: {layer_norms:?}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        layer_norms: Vec<f32>,
    },

    #[error("transfer layer count {requested} out of range 0..={backbone_len}")]
    TransferRange {
        requested: usize,
        backbone_len: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a binary weight file.
#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("bad magic bytes {found:?}, expected \"ROBO\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight file version {found} (this build reads {supported})")]
    Version { found: u16, supported: u16 },

    #[error("weight file truncated while reading {context}")]
    Truncated { context: String },

    #[error("weight file does not match model spec: {0}")]
    SpecMismatch(String),
}
