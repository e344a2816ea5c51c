//! Forward kernels for every operator in the detection network: shared
//! spatial / 3D convolution, retrospective convolution (plain and atrous),
//! ARPP, temporal average pooling, 2x2 deconvolution, pooling and pointwise
//! nonlinearities.
//!
//! All kernels are pure functions; backward counterparts live next to each
//! forward and are consumed by the graph module.

mod act;
mod arpp;
mod conv;
mod deconv;
mod pool;
mod retro;

pub use act::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use arpp::{arpp, ArppConfig, RetroModule};
pub use conv::{conv3d, conv3d_backward, conv3d_forward, Conv3Backward, Conv3Kernel};
pub use deconv::{deconv2x2, deconv2x2_backward, deconv2x2_forward, Deconv2x2Kernel};
pub use pool::{
    maxpool2, maxpool2_backward, temporal_avg_pool, temporal_avg_pool_backward,
};
pub use retro::{retro_conv, retro_conv_backward, retro_conv_forward, RetroBackward, RetroKernel};

#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("temporal length error: {0}")]
    TemporalLength(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}
