//! Dense tensor operations with analytic backward passes, losses and Adam.

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod gemm;
pub mod gradcheck;
mod loss;
mod pool;
mod tensor;

pub use adam::{adam_step, OptimConfig};
pub use batchnorm::{batchnorm2d, batchnorm2d_backward, BatchNormCache, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_backward, conv_output_dim};
pub use dense::{
    concat_channels, dropout, fully_connected, fully_connected_backward, relu, relu_backward, relu_inplace,
    scale_channel, scale_channel_backward, sigmoid_biased, sigmoid_biased_grad, split_channels_grad, Mode,
};
pub use loss::l1_loss;
pub use pool::{maxpool2d, maxpool2d_backward, Pooled};
pub use tensor::{Param, Tensor};
pub(crate) use tensor::ensure_finite;
