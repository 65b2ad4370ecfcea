//! Core algorithms for scribble-supervised LiDAR semantic segmentation.
//!
//! The crate covers the compute side of a three-stage self-training pipeline:
//!
//! 1. **Training** — a mean-teacher pair of per-point classifiers is fitted on
//!    sparse scribble labels, with a supervised term on labeled points and a
//!    consistency term between teacher and student on unlabeled points.
//!    Point features can be enriched with pyramid local semantic context
//!    ([`pls`]) built from the scribbles themselves.
//! 2. **Pseudo-labeling** — the teacher's predictions on unlabeled points are
//!    filtered with class- and range-aware confidence thresholds ([`crb`]) to
//!    produce an expanded label set.
//! 3. **Distillation** — a fresh classifier is trained on scribbles plus
//!    pseudo-labels using plain geometric features only.
//!
//! Everything here is `no_std` + `alloc`: file formats, threading and the
//! command-line driver live in the companion `scribbleseg` crate. All
//! randomness is drawn from caller-seeded ChaCha streams and all float math
//! goes through `libm`, so results are reproducible bit-for-bit across
//! platforms and thread counts.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod augment;
pub mod binning;
pub mod cloud;
pub mod crb;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod pls;
pub mod synth;
pub mod train;

pub use augment::AugmentConfig;
pub use binning::{AnnulusSpec, CylGridSpec};
pub use cloud::{ClassMap, FeatureMatrix, LabelArray, PointCloud, SoftPrediction};
pub use crb::{ConfidenceStore, PseudoLabels, PseudoSet, Strategy, ThresholdTable};
pub use error::{Error, Result};
pub use eval::ConfusionMatrix;
pub use model::Mlp;
pub use pls::{HistogramPyramid, PlsConfig, PlsMatrix};
pub use synth::SceneConfig;
pub use train::{TeacherStudent, TrainConfig, TrainFrame};
