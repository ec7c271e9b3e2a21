//! Differentiable layer primitives. Each forward has a matching backward that
//! takes the forward input (and any cache) together with the output gradient.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod pool;
pub mod softmax;
pub mod tape;

pub use activation::{relu, relu_backward};
pub use batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormState, BnCache, BnGrads};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use pool::{
    avgpool2x2, avgpool2x2_backward, global_avg_pool, global_avg_pool_backward, maxpool2x2,
    maxpool2x2_backward,
};
pub use softmax::{cross_entropy, softmax, softmax_backward, softmax_cross_entropy, SoftmaxLoss};
pub use tape::{GradientTape, LayerCache, TapeEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
