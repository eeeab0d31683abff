//! Radar-camera extrinsic calibration with spherical measurement noise.
//!
//! Radar detections arrive as `(range, elevation, azimuth)` with independent
//! Gaussian noise on each coordinate. [`noise`] derives the resulting bias
//! and covariance of the Cartesian point, [`solvers`] uses them in a
//! covariance-weighted, bias-compensated PnP refinement, [`robust`] wraps the
//! pipeline in RANSAC, and [`simulation`] runs Monte-Carlo consistency
//! experiments against baseline estimators.

pub mod error;
pub mod geometry;
pub mod noise;
pub mod robust;
pub mod simulation;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::{
    cartesian_to_spherical, project, rotation_error, spherical_to_cartesian, translation_error,
    CameraIntrinsics, CartesianPoint, PixelPoint, Pose, SphericalPoint,
};
pub use noise::NoiseSpec;
pub use robust::{ransac_solve, RansacOptions, RansacResult};
pub use simulation::{generate_scene, run_consistency_experiment, ScenarioSpec, TrialRecord};
pub use solvers::{Correspondence, SolveOptions, SolveReport, SolverKind};
