use thiserror::Error;

/// Errors raised by the calibration library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value lies outside the domain of the quantity it represents.
    #[error("domain error: {0}")]
    Domain(String),
    /// A point transforms to a non-positive depth in the camera frame.
    #[error("point {index} is behind the camera (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },
    /// Fewer correspondences than the method requires.
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    /// The point configuration does not determine a pose.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    /// The initial pose cannot start the refinement.
    #[error("initialization failed: {0}")]
    Initialization(String),
    /// RANSAC never produced a usable model.
    #[error("no valid model after {trials} trials ({degenerate} degenerate samples)")]
    NoValidModel { trials: usize, degenerate: usize },
    /// Scene generation could not place enough visible points.
    #[error("scene generation failed: {0}")]
    SceneGeneration(String),
    /// An options struct violates its invariants.
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

pub type Result<T> = std::result::Result<T, Error>;
