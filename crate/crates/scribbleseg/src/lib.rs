//! Filesystem half of the scribble-supervised segmentation pipeline.
//!
//! [`scribbleseg_core`] holds the arithmetic: descriptors, the classifier,
//! pseudo-label selection, metrics and the synthetic scene generator. This
//! crate wraps it with everything that touches a disk — KITTI-style point
//! and label files, model checkpoints, JSON configuration, stage drivers
//! and the `scribbleseg` command-line binary.
//!
//! Stage artifacts are written deterministically: given the same
//! configuration and data, every output file is byte-identical across runs
//! and across worker thread counts. Timings and progress lines go to
//! stdout only, never into artifacts.

pub mod checkpoint;
pub mod config;
pub mod descriptors;
pub mod error;
pub mod kitti;
pub mod report;
pub mod stages;

pub use config::{resolve_class_map, PipelineConfig};
pub use error::{PipelineError, Result};
pub use report::Report;
