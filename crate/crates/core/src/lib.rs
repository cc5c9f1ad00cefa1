//! U-HDN: a U-net encoder-decoder with a multi-dilation bottleneck and
//! deeply-supervised hierarchical side outputs for pixel-wise pavement crack
//! segmentation, with its training loop and tolerance-margin scoring.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the production precision.

pub mod ablation;
pub mod config;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod maps;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod scalar;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use maps::{Mask, ProbMap};
pub use net::{NetworkConfig, SideBundle};
pub use scalar::Scalar;
pub use tape::{GradTape, Gradients, Var};
pub use tensor::Tensor4;
pub use training::TrainConfig;

/// Production tensor (`f32` storage).
pub type Tensor = Tensor4<f32>;
/// Gradient-checking tensor.
pub type Tensor64 = Tensor4<f64>;
pub type Params = net::NetworkParams<f32>;
pub type Params64 = net::NetworkParams<f64>;
pub type Tape = GradTape<f32>;
pub type Bundle = SideBundle<f32>;
pub type Kernel = ops::ConvKernel<f32>;
