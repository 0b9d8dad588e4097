//! Core algorithms for whole-slide TIL quantification.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`stain`]: RGB / optical density / HED conversions and linear stain augmentation
//! - [`helm`]: the rule-based nucleus detector built on [`morphology`] and [`contour`]
//! - [`metrics`]: instance matching and the segmentation / classification metric suite
//! - [`survival`]: Kaplan–Meier, log-rank, Cox hazard ratios, cut-off sweeps
//! - [`cohort`]: tissue detection, patch grids and per-patient aggregation
//! - [`pyramid`]: DeepZoom level arithmetic, tile export and region reads

pub mod cohort;
pub mod contour;
pub mod helm;
pub mod interval;
pub mod metrics;
pub mod morphology;
pub mod pyramid;
pub mod raster;
pub mod stain;
pub mod survival;

pub use interval::Interval;
pub use raster::{BinaryMask, RasterError, RasterImage};
