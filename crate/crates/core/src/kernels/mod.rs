//! Primitive tensor operations and their analytic backward rules.

mod conv;
mod depthwise;
pub mod gemm;
mod pointwise;
mod pool;

pub use conv::{conv2d, conv2d_backward, conv2d_backward_raw, conv2d_forward_raw, ConvGeometry, ConvGrads, ConvPath};
pub use depthwise::{depthwise_conv2d, depthwise_conv2d_backward};
pub use pointwise::{
    add, bce_loss, bce_loss_backward, broadcast_scale, broadcast_scale_backward, concat_channels,
    fully_connected, fully_connected_backward, hadamard, hadamard_backward, neg, relu, relu_backward, sigmoid, sigmoid_backward,
    sigmoid_scalar, split_channels, upsample_nearest2x, upsample_nearest2x_backward,
};
pub use pool::{
    adaptive_avg_pool, adaptive_avg_pool_backward, adaptive_max_pool, adaptive_max_pool_backward,
    adaptive_window, global_avg_pool, global_max_pool, MaxPoolOutput,
};
