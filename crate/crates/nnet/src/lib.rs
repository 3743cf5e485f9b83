//! Dense tensors with reverse-mode differentiation and the layers used by
//! the policy networks.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod pe;
pub mod scalar;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{patch_grid, Gradients, Graph, Unary, Var};
pub use kernels::SoftmaxAxis;
pub use layers::{Attention, Conv2d, Init, LayerNorm, Linear, LstmCell, ParamPlan, ParamSpec, ResidualMlp};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use pe::sinusoidal_pe;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
