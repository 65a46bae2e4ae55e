//! Training, the three experiment protocols, checkpoints and reports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod report;
pub mod train;

pub use error::{HarnessError, Result};
