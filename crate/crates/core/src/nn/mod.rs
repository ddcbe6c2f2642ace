//! Minimal dense/convolutional network core with reverse-mode differentiation.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{huber, Backward, Graph, NodeId};
pub use params::{Gradients, NetworkParams};
pub use tensor::{argmax, Scalar, Tensor};
