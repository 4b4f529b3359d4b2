//! File formats, batch orchestration and evaluation around
//! [`planestitch_core`].
//!
//! A pair lives in a directory with `detections.json`, `camera.json` and an
//! optional `keypoints.json`; `stitch` adds `report.json`, and synthetic
//! pairs also carry `gt.json` for `eval`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod export;
pub mod format;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::FormatError;
pub use pipeline::{run_batch, stitch_pair, Report};
