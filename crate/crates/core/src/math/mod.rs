//! Dense linear algebra and reverse-mode automatic differentiation, sized for
//! the small fully connected networks used by the generative model.

mod graph;
mod net;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use net::{BoundParams, Layer, NetParams};
pub use tensor::{affine, sigmoid, softplus, Matrix};
