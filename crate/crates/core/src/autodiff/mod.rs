//! Minimal reverse-mode differentiable array computation.

mod attention;
mod graph;
mod resize;
mod tensor;

pub use attention::{multi_head_attention, AttentionOutput, AttentionParams};
pub use graph::{Gradients, Graph, Var};
pub use resize::{bicubic_resize_2d, cubic_kernel, CUBIC_A};
pub use tensor::{DType, Parameter, Scalar, Tensor};
