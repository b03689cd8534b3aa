//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Only the primitives needed to train PReLU networks with a sparsity penalty
//! on the slopes are provided: matrix products, bias and residual additions,
//! (P)ReLU, per-channel gains, the L0.5 slope penalty and softmax
//! cross-entropy. [`Sgd`] implements momentum SGD with a multistep schedule and
//! [`grad_check`] compares analytic gradients against central differences.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use graph::{l05_slope_grad, Graph, NodeId, UnitMap, L05_GUARD};
pub use optim::{Param, Sgd, SgdConfig};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {} values, data has {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape {shape:?} has a zero extent")]
    ZeroExtent { shape: Vec<usize> },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("invalid unit map: {0}")]
    UnitMap(String),
    #[error("{op}: non-finite value {value} at flat index {index}")]
    NonFinite {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
