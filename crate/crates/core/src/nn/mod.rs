//! Minimal differentiable layer set over NHWC tensors.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
mod params;
mod scalar;
mod tensor;
pub mod var;

pub use kernels::{ConvSpec, Padding, PoolMode, PoolSpec};
pub use params::{glorot_normal, Init, ParamEntry, ParamStore};
pub use scalar::{gemm, MatRef, Scalar};
pub use tensor::Tensor;
pub use var::{Activation, Gradients, Var};
