//! Minimal dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in evaluation order. Leaves are either
//! trainable ([`Tape::param`]) or constant ([`Tape::constant`]); gradients
//! flow only through nodes that depend on a trainable leaf.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Segment, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Softmax of one row outside any tape, with the same stabilization as the
/// taped op.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    kernels::softmax_in_place(&mut out);
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("axis {axis} out of range for {ndim}-d tensor")]
    InvalidAxis { axis: usize, ndim: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    InvalidArgument(&'static str),
}
