//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Values live in row-major `Vec<f64>` storage. A [`Graph`] is a tape of op
//! nodes in topological (insertion) order; [`Graph::backward`] walks it in
//! exact reverse order, so gradients are deterministic and two runs on
//! identical graphs produce bit-identical results.

mod graph;

pub use graph::{Graph, GraphStats, NodeId};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// A plain dense tensor. Parameters and inputs live outside any graph as
/// `Tensor`s and are entered into a fresh graph per forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data, requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![0.0; n], requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![value; n], requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false }
    }

    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn frozen(mut self) -> Self {
        self.requires_grad = false;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Raw little-endian byte view of the data, used for freeze-contract
    /// hashing and checkpoint determinism checks.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorError {
    /// Shapes incompatible for the named op.
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    /// Backward called on a non-scalar node.
    NonScalarLoss { shape: Vec<usize> },
    /// Index or axis out of range for the named op.
    OutOfRange { op: &'static str, detail: String },
}

impl core::fmt::Display for TensorError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::OutOfRange { op, detail } => write!(f, "{op}: {detail}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

/// Numpy-style broadcast of two shapes: axes align from the right and a
/// size-1 axis expands to match.
pub fn broadcast_shapes(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>, TensorError> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

pub(crate) fn err_out_of_range(op: &'static str, detail: String) -> TensorError {
    TensorError::OutOfRange { op, detail }
}

pub(crate) fn pad_left(shape: &[usize], nd: usize) -> Vec<usize> {
    let mut p = vec![1usize; nd];
    p[nd - shape.len()..].copy_from_slice(shape);
    p
}

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

#[allow(unused)]
pub(crate) fn fmt_shape(s: &[usize]) -> String {
    format!("{s:?}")
}
