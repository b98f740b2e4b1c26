//! pavecond: pavement condition classification from georeferenced imagery.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! * [`geo`] interpolates route centerlines, buffers pavement sections into
//!   lane polygons and crops them out of georeferenced rasters.
//! * [`pmis`] computes PMIS distress, ride and condition scores and maps a
//!   condition score onto the five condition classes.
//! * [`dataset`] joins section images to labels, splits, oversamples,
//!   augments and normalizes them.
//! * [`model`] is a small convolutional classifier (conv blocks, global
//!   average pooling, dense head) with layer freezing and Adam training.
//! * [`ensemble`] averages per-model class probabilities (soft voting).
//! * [`metrics`] builds confusion matrices and precision/recall/F1 summaries.
//! * [`pipeline`] wires the stages into file-to-file commands.

pub mod dataset;
pub mod ensemble;
mod error;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pmis;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use pmis::ConditionClass;

/// Number of condition classes predicted by every model.
pub const NUM_CLASSES: usize = 5;
