//! Error type shared by all core modules.

use thiserror::Error;

/// Everything that can go wrong inside the core pipeline stages.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Two per-point arrays that must describe the same frame disagree in length.
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    /// A coordinate, intensity or probability is NaN or infinite.
    #[error("non-finite value in {what} at point {index}")]
    NonFiniteValue { what: &'static str, index: usize },
    /// A probability row does not sum to one.
    #[error("probability row {index} sums to {sum:.6}, expected 1")]
    UnnormalizedDistribution { index: usize, sum: f64 },
    /// A raw label id has no entry in the class map.
    #[error("raw label id {id} at point {index} is not in the class map")]
    UnknownRawId { id: u16, index: usize },
    /// A train id cannot be mapped back to a raw id.
    #[error("train id {id} has no inverse raw id in the class map")]
    MissingInverse { id: u16 },
    /// An operation that needs at least one point got an empty frame.
    #[error("frame has no points")]
    EmptyFrame,
    /// All points sit at the sensor origin, so range bins would have zero width.
    #[error("degenerate range: maximum planar range is zero")]
    DegenerateRange,
    /// Feature width does not match what the model was built for.
    #[error("shape mismatch: got {got} feature columns, model expects {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    /// A loss was requested over a mask that selects no points.
    #[error("mask selects no points")]
    EmptyMask,
    /// The training loss became non-finite.
    #[error("training diverged: non-finite loss at step {step}")]
    DivergenceDetected { step: u64 },
    /// Scribble generation could not reach the requested labeled fraction.
    #[error("cannot reach labeled fraction {target:.4}, best achievable {reached:.4}")]
    UnreachableTarget { target: f64, reached: f64 },
    /// Every class has an empty union, so no IoU is defined.
    #[error("no class present in ground truth or predictions")]
    NoEvaluableClass,
    /// Relative performance against a zero or negative baseline.
    #[error("baseline score must be positive, got {baseline}")]
    ZeroBaseline { baseline: f64 },
    /// Pseudo-label accuracy over an empty pseudo-label set.
    #[error("pseudo-label set is empty")]
    EmptyPseudoSet,
}

pub type Result<T> = core::result::Result<T, Error>;
