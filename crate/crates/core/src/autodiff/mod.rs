//! Minimal reverse-mode automatic differentiation over small dense tensors.
//!
//! Only the operations needed by the GCN and importance layers are provided.
//! All arithmetic is `f64`; shapes are 1-D or 2-D and never broadcast
//! implicitly (the row/column broadcasting ops are explicit).

mod tape;
mod tensor;


use thiserror::Error;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: value {value} outside the function's domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    Precondition(String),
}

/// Builds a one-hot `n × classes` target matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = 1.0;
    }
    t
}
