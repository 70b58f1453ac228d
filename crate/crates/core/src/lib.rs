//! Quantile regression with sparse, track-structured labels for raster
//! height prediction.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod raster;
pub mod rng;
pub mod stack;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use labels::{load_labels, partition_tracks, save_labels, LabelPoint, SparseLabels, Track};
pub use raster::{load_raster, save_raster, Grid, Raster};
pub use stack::{QuantileStack, StackView, MEDIAN_CHANNEL, STANDARD_QUANTILES};
