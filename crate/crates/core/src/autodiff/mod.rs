//! A small reverse-mode automatic differentiation engine.
//!
//! A [`Graph`] is a tape of nodes appended in evaluation order, so node order is a
//! topological order. Every op computes its value eagerly and records how to push
//! gradients back to its inputs. Ops never broadcast implicitly except for
//! single-element operands of the elementwise ops; explicit broadcasting goes
//! through [`Graph::broadcast_last`].
//!
//! Besides [`Graph::backward`] the tape supports forward-mode tangents
//! ([`Graph::jvp`]) whose tangent nodes are themselves ordinary graph nodes. That is
//! what the critic gradient penalty uses: the input gradient of a critic is
//! evaluated once by value, and its dependence on the critic parameters is
//! recovered by differentiating a directional derivative in reverse mode.

mod array;
mod check;
mod graph;
mod kernels;
mod optim;
mod params;

pub use array::Array;
pub use check::{gradient_check, GradCheckReport};
pub use graph::{Graph, NodeId, DEGENERATE_NORM};
pub use optim::{AdamConfig, AdamState};
pub use params::{Bound, Param, ParamStore};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape { op: &'static str, shape: Vec<usize>, reason: String },
    #[error("{op}: degenerate input at row {row}")]
    Degenerate { op: &'static str, row: usize },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("backward already ran on this graph; call reset_grads first")]
    BackwardRepeated,
    #[error("graph builder is not deterministic (outputs {first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("{0} is not supported")]
    Unsupported(&'static str),
}
