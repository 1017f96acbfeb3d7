use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} does not hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("expected a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },

    #[error("axis {axis} is invalid for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },

    #[error("{op}: index {index} out of bounds for extent {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("{0}: no inputs")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub(crate) fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
