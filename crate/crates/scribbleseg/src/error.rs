//! Pipeline-level error type. Every variant belongs to a coarse category
//! that the binary prints as a prefix, so a user can tell at a glance
//! whether a failure is their filesystem, their data, their configuration
//! or the math underneath.

use std::path::PathBuf;

/// Anything that can go wrong between the command line and the core
/// routines.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// An operating-system level failure on a specific path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary file whose length is not a whole number of records.
    #[error("{path}: {len} bytes is not a multiple of the {record}-byte record")]
    Truncated {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    /// A file parsed structurally but its contents failed validation.
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: scribbleseg_core::Error,
    },

    /// A checkpoint whose header or payload does not describe a model.
    #[error("{path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    /// A sequence directory that should exist but does not.
    #[error("missing directory {path}")]
    MissingDirectory { path: PathBuf },

    /// A sequence whose directories exist but hold no frames.
    #[error("{path} contains no frames")]
    EmptySequence { path: PathBuf },

    /// A frame present in one sequence directory but not another, e.g. a
    /// point file without its required label file.
    #[error("frame {stem}: expected companion file {missing}")]
    UnpairedFrame { stem: String, missing: PathBuf },

    /// A required stage input that has not been produced yet.
    #[error("{path} not found; {hint}")]
    Missing { path: PathBuf, hint: &'static str },

    /// A malformed or inconsistent configuration value.
    #[error("{detail}")]
    Config { detail: String },

    /// A configuration or class-map file that is not valid JSON.
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A failure inside the numeric core, e.g. training divergence.
    #[error(transparent)]
    Core(#[from] scribbleseg_core::Error),
}

impl PipelineError {
    /// Coarse failure category, used as the `error[...]` prefix on stderr.
    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::Io { .. } => "io",
            PipelineError::Truncated { .. }
            | PipelineError::Decode { .. }
            | PipelineError::Checkpoint { .. } => "format",
            PipelineError::MissingDirectory { .. }
            | PipelineError::EmptySequence { .. }
            | PipelineError::UnpairedFrame { .. }
            | PipelineError::Missing { .. } => "data",
            PipelineError::Config { .. } | PipelineError::Json { .. } => "config",
            PipelineError::Core(_) => "core",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Attaches a path to a bare IO error.
pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
