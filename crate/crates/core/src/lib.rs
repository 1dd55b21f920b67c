//! Audio Spectrogram Mixer: an all-MLP audio classifier built on a minimal
//! reverse-mode autodiff engine, with a log-mel frontend, checkpoint tools
//! (including RGB-to-grayscale projection surgery), and a training harness.
//!
//! The numeric core is generic over the scalar type via [`scalar::Real`];
//! production paths run at `f32` with f64-accumulated reductions, and the
//! test oracles instantiate the same code at `f64`.

pub mod activations;
pub mod checkpoint;
pub mod error;
pub mod frontend;
pub mod manifest;
pub mod metrics;
pub mod mixer;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete production aliases. Training, checkpoints, and the CLI all run at
/// 32-bit precision.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tensor::Tape<f32>;
pub type MixerModel32 = mixer::MixerModel<f32>;

/// Double-precision aliases, used by oracles and finite-difference checks.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
