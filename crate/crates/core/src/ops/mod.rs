//! Forward kernels and their vector-Jacobian products.
//!
//! Every function here is pure. [`GradTape`](crate::tape::GradTape) records
//! calls to the forward kernels and replays the matching `*_backward`.

mod activation;
mod concat;
pub(crate) mod conv;
mod pool;
pub(crate) mod upconv;
mod upsample;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, effective_kernel_size, ConvGrads, ConvKernel};
pub use pool::{max_pool_2x2, max_pool_2x2_backward, max_pool_2x2_with_argmax};
pub use upconv::{up_conv_2x2, up_conv_2x2_backward};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward, SUPPORTED_FACTORS};
