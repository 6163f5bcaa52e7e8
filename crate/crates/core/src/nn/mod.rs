//! Minimal dense neural-network toolkit: autodiff graph, layers, optimizer.

mod graph;
mod optim;
mod params;

pub use graph::{gelu_scalar, Gradients, Graph, Mat, Var};
pub use optim::{AdamW, WarmupMultiStep};
pub use params::{normal_matrix, Bind, Linear, Mlp, Param, ParamStore};
