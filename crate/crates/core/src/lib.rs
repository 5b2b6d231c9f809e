//! Ger detection and settlement analytics on slippy-map imagery.
//!
//! - [`tile_pyramid`]: web-mercator tile math and the zoom-15 analysis grid
//! - [`scene_labels`]: footprint rasterization and synthetic training scenes
//! - [`segnet`]: a small atrous-convolution segmentation network with ASPP,
//!   cross-entropy and focal losses, exact backpropagation and SGD training
//! - [`metrics`]: pixel-level F1, IoU and accuracy
//! - [`counting`]: blob extraction, area-to-count conversion and review verdicts
//! - [`analysis`]: grid change maps, period series, household ratios, correlation
//! - [`geo_access`]: distances to facilities, DEM elevation and slope

pub mod analysis;
pub mod counting;
pub mod error;
pub mod geo_access;
pub mod metrics;
pub mod period;
pub mod raster;
pub mod scene_labels;
pub mod segnet;
pub mod tile_pyramid;

pub use error::{Error, Result};
pub use period::Period;
pub use raster::Mask;
pub use tile_pyramid::{GeoPoint, TileBBox, TileCoord};
