//! Multi-agent trajectory forecasting on sports tracking data.
//!
//! * [`autodiff`] – tensors with a reverse-mode tape, gradient checking
//! * [`optim`] – AdamW and the warm-up learning-rate schedule
//! * [`data`] – ingestion, resampling, splits, windows, normalization, context and graphs
//! * [`models`] – the eight forecasters
//! * [`eval`] – velocity integration and ADE/FDE/AAE/FAE

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Sampling interval of the tracking data, seconds (25 Hz).
pub const DT: f64 = 0.04;
