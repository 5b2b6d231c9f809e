//! The `germap` pipeline: fetch or synthesize imagery, train and run the
//! segmentation model, review and count detections, and compute the
//! settlement indicators.

pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{exit, CliError, Result};
