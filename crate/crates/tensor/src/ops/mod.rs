//! Differentiable operators. Each records its backward pass when any input
//! tracks gradients and gradient recording is enabled.

mod channels;
mod conv;
mod elementwise;
mod loss;
mod norm;
mod pool;
mod resize;

pub use channels::{concat_channels, slice_channels};
pub use conv::{conv2d, conv2d_output_shape};
pub use elementwise::{add, flip_w, mean, mul, mul_all, relu, scale, sum};
pub use loss::cross_entropy;
pub use norm::batch_norm;
pub use pool::{broadcast_spatial, global_avg_pool, max_pool};
pub use resize::{bilinear_resize, resize_bilinear_array};

/// Alias matching the usual name of the Hadamard product.
pub use elementwise::mul as eltwise_mul;
