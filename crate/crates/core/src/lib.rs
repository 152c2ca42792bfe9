//! Parallel convolutional networks coordinated by a discriminator.
//!
//! Two (or more) identical subnetworks are trained so that their feature
//! extractors learn complementary representations: a small convolutional
//! discriminator scores which extractor a feature map came from, and
//! least-squares losses with distinct per-subnetwork targets push the
//! feature distributions apart. Training runs in three phases (asymmetric
//! warm-up, joint adversarial-style training, fusion-head training) and
//! inference uses only the extractors plus a fused extra classifier.
//!
//! The crate is self-contained: an NCHW tensor type with reverse-mode
//! automatic differentiation, the layer kernels, model builders, the phase
//! state machine, dataset tooling (CIFAR binaries plus a synthetic
//! benchmark), checkpointing, and Grad-CAM evidence generation.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`): training
//! defaults to single precision while gradient-check suites run in double
//! precision. Concrete aliases for the common instantiations live at the
//! crate root.

pub mod data;
pub mod engine;
pub mod error;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod xai;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor, the default for training.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision tensor, used by the gradient-check suites.
pub type Tensor64 = tensor::Tensor<f64>;

/// Single-precision network.
pub type Network32 = zoo::Network<f32>;
/// Single-precision discriminator.
pub type Discriminator32 = zoo::Discriminator<f32>;
/// Single-precision model bundle (subnetworks + discriminator + fusion head).
pub type Dpcn32 = engine::Dpcn<f32>;
/// Single-precision dataset.
pub type ImageDataset32 = data::ImageDataset<f32>;
