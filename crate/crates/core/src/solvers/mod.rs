//! Pose estimators: the EPnP linear initializer, two baseline refiners and
//! the spherical-noise-aware 3D refiner.

mod epnp;
mod lm;
mod residuals;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CartesianPoint, PixelPoint, Pose, SphericalPoint};
use crate::noise::NoiseSpec;

pub use epnp::solve_linear_init;
pub use lm::{levenberg_marquardt, ResidualModel};
pub use residuals::{
    residual_3dupnp, residual_3dupnp_with, AlgebraicModel, ReprojectionModel, ScaleMode,
    UncertainPointModel,
};

/// One radar detection matched to its image observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    radar: SphericalPoint,
    cartesian: CartesianPoint,
    pixel: PixelPoint,
}

impl Correspondence {
    pub fn new(radar: SphericalPoint, pixel: PixelPoint) -> Self {
        Self {
            radar,
            cartesian: radar.to_cartesian(),
            pixel,
        }
    }

    pub fn radar(&self) -> &SphericalPoint {
        &self.radar
    }

    /// Cartesian form of the radar measurement.
    pub fn point(&self) -> &CartesianPoint {
        &self.cartesian
    }

    pub fn pixel(&self) -> &PixelPoint {
        &self.pixel
    }
}

/// Levenberg–Marquardt stopping and damping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop when the step norm falls below this value.
    pub param_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-10,
            param_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0
            || !positive(self.cost_tolerance)
            || !positive(self.param_tolerance)
            || !positive(self.initial_damping)
        {
            return Err(Error::InvalidOption(format!(
                "solver options must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Outcome of a nonlinear refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub pose: Pose,
    pub final_cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Squared residual norm of every input point; `+∞` for points that were
    /// behind the camera at the initial pose and therefore left out.
    pub per_point_residuals: Vec<f64>,
}

/// The estimators available to experiments and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SolverKind {
    /// Mahalanobis 3D residual with bias compensation.
    #[serde(rename = "3dupnp")]
    Uncertain3d,
    /// Pixel reprojection error.
    #[serde(rename = "reproj")]
    Reprojection,
    /// Algebraic point residual in normalized image coordinates.
    #[serde(rename = "algebraic")]
    Algebraic,
    /// The linear initializer alone.
    #[serde(rename = "epnp")]
    Linear,
}

impl SolverKind {
    pub const REFINERS: [SolverKind; 3] = [
        SolverKind::Uncertain3d,
        SolverKind::Reprojection,
        SolverKind::Algebraic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Uncertain3d => "3dupnp",
            SolverKind::Reprojection => "reproj",
            SolverKind::Algebraic => "algebraic",
            SolverKind::Linear => "epnp",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3dupnp" => Ok(SolverKind::Uncertain3d),
            "reproj" => Ok(SolverKind::Reprojection),
            "algebraic" => Ok(SolverKind::Algebraic),
            "epnp" => Ok(SolverKind::Linear),
            other => Err(Error::InvalidOption(format!("unknown solver '{other}'"))),
        }
    }
}

/// Refines `init` by minimizing the whitened, bias-compensated 3D residual
/// of every correspondence.
pub fn solve_3dupnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    init: &Pose,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    solve_3dupnp_with(corrs, k, noise, ScaleMode::default(), init, opts)
}

/// [`solve_3dupnp`] with an explicit choice of back-projection scale.
pub fn solve_3dupnp_with(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    scale: ScaleMode,
    init: &Pose,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    check_arity(corrs)?;
    let model = UncertainPointModel::new(corrs, k, noise, scale);
    levenberg_marquardt(&model, init, opts)
}

/// Refines `init` by minimizing squared pixel reprojection error.
pub fn solve_reprojection_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    check_arity(corrs)?;
    levenberg_marquardt(&ReprojectionModel::new(corrs, k), init, opts)
}

/// Refines `init` by minimizing the algebraic residual `x̂ - q ẑ`.
pub fn solve_algebraic_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    check_arity(corrs)?;
    levenberg_marquardt(&AlgebraicModel::new(corrs, k), init, opts)
}

/// Dispatches a refiner by kind. [`SolverKind::Linear`] returns `init`
/// unchanged with its 3D residuals.
pub fn refine(
    kind: SolverKind,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    init: &Pose,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    match kind {
        SolverKind::Uncertain3d => solve_3dupnp(corrs, k, noise, init, opts),
        SolverKind::Reprojection => solve_reprojection_pnp(corrs, k, init, opts),
        SolverKind::Algebraic => solve_algebraic_pnp(corrs, k, init, opts),
        SolverKind::Linear => {
            check_arity(corrs)?;
            let model = UncertainPointModel::new(corrs, k, noise, ScaleMode::default());
            let per_point_residuals = (0..corrs.len())
                .map(|i| model.squared_norm(init, i).unwrap_or(f64::INFINITY))
                .collect::<Vec<_>>();
            let cost = per_point_residuals.iter().filter(|r| r.is_finite()).sum();
            Ok(SolveReport {
                pose: *init,
                final_cost: cost,
                initial_cost: cost,
                iterations: 0,
                converged: true,
                cost_history: vec![cost],
                per_point_residuals,
            })
        }
    }
}

pub(crate) const MIN_POINTS: usize = 4;

fn check_arity(corrs: &[Correspondence]) -> Result<()> {
    if corrs.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_POINTS,
            got: corrs.len(),
        });
    }
    Ok(())
}
