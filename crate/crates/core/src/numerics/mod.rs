//! Dense tensors, a per-batch reverse-mode graph, and optimizers.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::finite_difference_gradient;
pub use graph::{Graph, NodeId};
pub use optim::{AdamState, Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::{
    l2_distance, linear_forward, relu_forward, softmax_cross_entropy, Parameter, Tensor,
};
