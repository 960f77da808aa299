//! Temporal multi-modal fusion for continuous gesture recognition.
//!
//! Per-mode temporal encoders feed a windowed fusion block with channel
//! gating, followed by a fused temporal encoder that labels every frame.
//! Everything runs on a small reverse-mode autodiff engine generic over the
//! floating-point type; the aliases below fix it to `f64`.

pub mod blocks;
pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod ufm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = tensor::Graph<f64>;
pub type Model = model::TmmfModel<f64>;
