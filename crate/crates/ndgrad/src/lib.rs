//! A small dense-array engine with reverse-mode automatic differentiation.
//!
//! Arrays are row-major `f64` buffers. Computations are recorded on a [`Tape`]
//! as they execute; [`Tape::backward`] replays the record in reverse and
//! returns the gradient of a scalar output with respect to every node.
//!
//! Named parameter collections live in a [`ParamStore`], which can be bound to
//! a tape as leaves and later read back together with their gradients.

mod array;
pub mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use array::Array;
pub use params::{BoundParams, ParamStore};
pub use tape::{Gradients, Tape, Var};

/// Errors raised by array construction and taped operations.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: invalid geometry: {detail}")]
    InvalidGeometry { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T> = std::result::Result<T, GradError>;
