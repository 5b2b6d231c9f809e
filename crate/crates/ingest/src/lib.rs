//! Data movement for germap: XYZ tile downloads into an on-disk cache, and
//! validated readers for footprint, facility and census inputs.

mod error;
pub mod fetch;
pub mod readers;

pub use error::{IngestError, Result};
pub use fetch::{cache_root_from_env, fetch_tiles, FetchReport, TileRange, TileSource, CACHE_ROOT_ENV};
pub use readers::{
    read_deprivation_csv, read_district_csv, read_facilities, read_footprints, read_household_csv, FeatureError,
    Loaded,
};
