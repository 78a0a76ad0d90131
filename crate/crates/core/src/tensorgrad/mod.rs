//! Dense tensors with reverse-mode differentiation for the small set of
//! layers used by the watermark and embedder networks.
//!
//! The graph is an arena rebuilt for every training step: operations append
//! nodes whose parents always precede them, and [`Graph::backward`] walks the
//! arena in reverse. All arithmetic is `f64`; persisted weights are `f32`.

mod gradcheck;
mod graph;
pub mod kernels;
pub mod layers;
mod optim;
mod tensor;

pub use gradcheck::{compare_gradients, finite_diff_check, GradCheckReport, ParamCheck};
pub use graph::{BnMode, Graph, NodeId, RunningStats};
pub use optim::{AdamConfig, Bound, Param, ParamSet};
pub use tensor::Tensor;

/// Batch-norm epsilon used by every network in this crate.
pub const BN_EPS: f64 = 1e-5;
/// Weight given to the newest batch when updating running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: {axis} mismatch (expected {expected}, found {found})")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected a rank-{expected} tensor, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("loss must be a scalar, found shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this graph; call reset_grads first")]
    BackwardTwice,
    #[error("graph cycle detected at node {0}")]
    Cycle(usize),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("inference-mode batch norm requires populated running statistics")]
    MissingRunningStats,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
