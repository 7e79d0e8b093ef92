//! Forward and backward passes for every layer the network uses.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod pool;
pub mod tconv;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, softmax_backward, softmax_channel};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_naive, ConvSpec};
pub use gradcheck::{finite_difference_check, grad_check, relative_error, GradCheckLayer, FD_STEP};
pub use loss::{categorical_cross_entropy, CLAMP_EPS};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolIndices};
pub use tconv::{tconv2_backward, tconv2_forward};

use crate::tensor::Tensor;

/// Gradients of a layer with respect to its input and, when it has them,
/// its weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_input: Tensor,
    pub d_weights: Option<Tensor>,
    pub d_bias: Option<Tensor>,
}
