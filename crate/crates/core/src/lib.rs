//! Core library for DGCformer: a forecaster for multivariate time series
//! that first groups channels with similar dynamics and then restricts
//! cross-channel attention to pairs inside the same group.
//!
//! The pipeline has three stages:
//!
//! 1. A GRU autoencoder compresses each channel's lookback window into a
//!    low-dimensional code ([`clustering::RecurrentAutoencoder`]).
//! 2. A graph-convolutional head over the channel correlation graph turns
//!    those codes into soft cluster assignments, trained with a
//!    self-sharpening KL objective ([`clustering::GraphClusterer`]).
//! 3. A patch transformer forecasts every channel, with channel-mixing
//!    attention masked to within-cluster pairs ([`forecaster::Forecaster`]).
//!
//! All numeric code is generic over [`Scalar`] so the same model runs in
//! `f32` (training speed) or `f64` (gradient checks). The [`tensor`] module
//! provides the reverse-mode autodiff engine everything is built on.

pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Tensor type used for training runs.
pub type Tensor32 = tensor::Tensor<f32>;
/// Tensor type used for numeric verification (gradient checks, oracles).
pub type Tensor64 = tensor::Tensor<f64>;
