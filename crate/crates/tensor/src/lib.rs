//! Minimal reverse-mode automatic differentiation on a flat tape, plus the
//! training-adjacent pieces that live at the same level of abstraction:
//! an Adam optimizer and a binary tensor checkpoint container.
//!
//! The engine is deliberately small: a [`Graph`] is an append-only arena of
//! matrix-valued nodes, each produced by one of a fixed set of primitives.
//! `backward` replays the tape in reverse, accumulating gradients into every
//! node that requires them. All primitives operate on row-major 2-D buffers;
//! scalars are 1x1 matrices and row vectors are 1xK.

mod container;
mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod real;

pub use container::{read_tensors, write_tensors, NamedTensor};
pub use gradcheck::{finite_difference_check, CheckInput, GradCheck};
pub use graph::{Graph, NodeId};
pub use kernels::{layer_norm_row, log_sum_exp, matmul_into, sigmoid, silu, softmax_row_in_place};
pub use optim::{Adam, ParamUpdate};
pub use real::Real;

use thiserror::Error;

/// Errors raised by the tensor engine. Shape violations are programming
/// errors in the caller; the remaining variants surface numeric or I/O
/// failures that a trainer must handle.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: {details}")]
    Shape { op: &'static str, details: String },
    #[error("{context}: non-finite value in `{name}` at flat index {index}")]
    NonFinite {
        context: &'static str,
        name: String,
        index: usize,
    },
    #[error("checkpoint: {0}")]
    Container(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
