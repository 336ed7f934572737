//! Phonetic-aware speech enhancement.
//!
//! A waveform U-Net enhancer trained with an L1 + multi-resolution STFT
//! objective, plus three ways of injecting features from a frozen phonetic
//! model: an encoder-tap regularizer, a perceptual supervision term, and
//! bottleneck conditioning. Layer selection over multi-layer providers is
//! either a fixed layer, a uniform mean, or a learned softmax-weighted mean.
//!
//! All numerics run in `f64` on the CPU through `candle-core`, which also
//! provides reverse-mode differentiation for training and gradient checks.

pub mod audio;
pub mod augment;
pub mod error;
mod linalg;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod phonetic;
pub mod trainer;

pub use error::{Error, Result};

/// Device and dtype used for every tensor in the crate.
pub(crate) const DTYPE: candle_core::DType = candle_core::DType::F64;

pub(crate) fn device() -> candle_core::Device {
    candle_core::Device::Cpu
}
