use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the frontline library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or size constraint violated (empty input, mismatched grids,
    /// zero target dimension, non-divisible network input, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A scalar parameter is outside its legal range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Pixel values are outside the range declared by their value domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Distance transform requested on a mask with no front pixel.
    #[error("no front present: mask has no true pixel")]
    NoFront,

    /// Threshold extraction on a constant distance map.
    #[error("no front signal: distance map is constant")]
    NoFrontSignal,

    /// Baseline zone extraction found no foreground after binarization.
    #[error("no zone detected: binarized zone mask is empty")]
    NoZone,

    /// An operation that needs a nonempty mask received an empty one.
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    /// Batch normalization in train mode over a single-element channel.
    #[error("degenerate batch: batch norm needs at least 2 elements per channel in train mode")]
    DegenerateBatch,

    /// Dataset-level failure (empty set, bad sample, inconsistent shapes).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Manifest parsing or validation failure; names the offending row.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// A model checkpoint path does not exist.
    #[error("model not found: {0}")]
    ModelNotFound(PathBuf),

    /// Checkpoint file is malformed or inconsistent with its config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Evaluation was asked to score samples that have no prediction.
    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    /// Training loss became non-finite.
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    /// Metric requested against an empty ground truth.
    #[error("undefined score: ground truth mask is empty")]
    UndefinedScore,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
