//! Residual channel attention networks (RCAN) for single-image
//! super-resolution, built on a small reverse-mode differentiable tensor core.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – dense `(n, c, h, w)` tensors and elementwise arithmetic.
//! * [`gradcheck`] – central finite differences, the oracle for every backward pass.
//! * [`layers`] – convolution, activations, pooling, channel scaling, pixel shuffle.
//! * [`blocks`] – channel attention, RCAB, residual groups and the residual-in-residual trunk.
//! * [`network`] – the full model, initialisation, checkpoints and self-ensemble inference.
//! * [`optim`] / [`train`] – L1 loss, Adam, the step schedule and the training loop.
//! * [`data`] – PPM I/O, colour conversion, resampling, degradation, patches, augmentation.
//! * [`metrics`] / [`eval`] – PSNR, SSIM and the dataset evaluation harness.

pub mod blocks;
pub mod data;
pub mod dihedral;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, ImageError, Result};
pub use network::{CaMode, RcanConfig, RcanParams};
pub use params::Params;
pub use tensor::{Real, Shape4, Tensor4};
