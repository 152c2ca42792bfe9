//! Differentiable operations: elementwise math, matmul, convolution,
//! pooling, batch normalization, activations, losses, and channel fusion.

mod activation;
mod basic;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;
mod shape_ops;

pub use activation::{leaky_relu, relu, sigmoid, softmax_rows};
pub use basic::{add, matmul, mean, mul, scale, select_column, sum};
pub use conv::{conv2d, ConvSpec};
pub use linear::linear;
pub use loss::{disc_l2_loss, softmax_cross_entropy};
pub use norm::{batch_norm, BatchNormState};
pub use pool::{avg_pool2d, global_avg_pool, max_pool2d, pool, PoolKind};
pub use shape_ops::{concat_channels, flatten, slice_channels, sum_features};

/// Train/eval switch for layers with batch-dependent behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
