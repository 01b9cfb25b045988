//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! The backward pass is itself built from differentiable primitives, so
//! gradients of expressions that contain gradients (double backpropagation)
//! come out of the same machinery.

mod eval;
mod graph;

pub use eval::{Bindings, Values};
pub use graph::{Graph, NodeId, Op};
