//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations eagerly (recording is the
//! forward pass) and replays them in reverse for gradients. The primitive
//! set is exactly what the spectral networks and their objectives need;
//! there is no broadcasting beyond row-wise bias addition and no shape
//! polymorphism beyond vectors and matrices.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport, NamedTensors};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("node id {0} is not on this tape")]
    InvalidNode(usize),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
}
