//! Forward and backward passes for the layer kinds the presets use.
//!
//! Each backward function recomputes what it needs from the layer input
//! rather than caching intermediate state, so the forward and backward
//! halves can be checked independently.

mod activation;
mod shadow;
mod batchnorm;
mod conv;
mod dense;
mod init;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_inference, BatchNormLayer};
pub use conv::{conv_backward, conv_forward, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub(crate) use dense::{check_backward as check_dense_backward, dense_input_grad};
pub use init::he_init;
pub use loss::softmax_cross_entropy;
pub use pool::{maxpool_backward, maxpool_forward};

pub(crate) use shadow::BinaryShadow;
use crate::tensor::Tensor;

/// Gradients produced by one layer's backward pass.
#[derive(Clone, Debug)]
pub struct LayerGrad {
    /// Gradient with respect to the layer input.
    pub d_input: Tensor,
    /// Parameter gradients, in the same order as the layer's parameters
    /// (weights before biases; gamma before beta).
    pub params: Vec<Tensor>,
}
