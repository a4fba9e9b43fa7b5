//! Channel-efficient EfficientNetV2 building blocks.
//!
//! - [`tensor`], [`ops`], [`tape`], [`gradcheck`]: rank-4 tensors, kernels,
//!   reverse-mode differentiation and the finite-difference oracle.
//! - [`attention`]: CE channel attention and the SE baseline.
//! - [`safm`]: multi-scale feature modulation with depthwise-separable
//!   branches.
//! - [`backbone`]: MBConv / Fused-MBConv blocks and the network builder.
//! - [`augment`]: raster augmentation and dataset expansion.
//! - [`train`]: dataset split, loss, optimizers, training and windowed metrics.
//! - [`cli`]: the `cenet` command line.

pub mod attention;
pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;
pub mod safm;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
