//! Reverse-mode automatic differentiation over dense `f64` tensors, plus the
//! small neural-network toolkit built on it.

mod adam;
pub mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{gaussian_log_pdf, log_sum_exp, Graph, Var};
pub use mlp::{dropout_masks, Activation, BoundMlp, Mlp};
pub use tensor::Tensor;
