//! Spectral-temporal selective state-space models for anomalous machine sound detection.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod init;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod real;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use tensor::Tensor;
