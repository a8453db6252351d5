//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! Only the primitives the denoiser needs are provided: 1×1×1, depthwise
//! spatial and depthwise temporal convolutions, channel normalization,
//! resampling, the RBF kernel, channel softmax and elementwise maps.

pub mod check;
mod graph;
pub(crate) mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{sigmoid, softplus, Graph, Unary, Var};
pub use optim::{clip_grad_norm, grad_norm, AdamW};
pub use params::{Init, ParamId, ParamStore};
pub use tensor::Tensor;
