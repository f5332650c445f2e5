//! Dense-tensor kernel with reverse-mode autodiff, an AdamW optimizer, and a
//! binary checkpoint format. Sized to what the recommender needs: rank-1/2
//! tensors, the op set used by the encoder-decoder and the graph pretrainer.

pub mod adamw;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod real;
pub mod sparse;
pub mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::CheckpointError;
pub use graph::{Gradients, Graph, Var};
pub use params::{sum_grad_sets, BoundParams, ParamId, ParamStore};
pub use real::Real;
pub use sparse::CsrMatrix;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor construction: shape {shape:?} does not hold {len} elements")]
    BadConstruction { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("duplicate parameter name: {0}")]
    DuplicateParam(String),
    #[error("unknown parameter name: {0}")]
    UnknownParam(String),
}
