//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("{op}: expected {expected} elements, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward() requires a scalar loss, got shape {shape:?}")]
    NotScalarLoss { shape: Vec<usize> },

    #[error("backward() already ran on this graph; build a new graph per step")]
    BackwardTwice,

    #[error("gradients not available: backward() has not run")]
    NoGradient,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid parameter {name}: {message}")]
    InvalidParam { name: &'static str, message: String },

    #[error("timestep {t} out of range 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("degenerate point cloud: {message}")]
    DegenerateCloud { message: String },

    #[error("point count mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config: {message}")]
    Config { message: String },

    #[error("checkpoint: {message}")]
    Checkpoint { message: String },

    #[error("{expected} checkpoint required, found {found}")]
    ModeMismatch { expected: String, found: String },

    #[error("training diverged at step {step}: loss {loss}; {diagnostics}")]
    Divergence {
        step: u64,
        loss: f64,
        diagnostics: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
