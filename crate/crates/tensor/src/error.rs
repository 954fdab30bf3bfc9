use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: usize,
        expected: usize,
        got: usize,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("shape {shape:?} holds {} elements but data has {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: index {index} out of range for size {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("{op}: invalid configuration: {reason}")]
    Config { op: &'static str, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub(crate) fn config(op: &'static str, reason: impl Into<String>) -> Self {
        Self::Config {
            op,
            reason: reason.into(),
        }
    }
}
