//! TOML run configuration.
//!
//! ```toml
//! [intrinsics]
//! fx = 800.0
//! fy = 800.0
//! u0 = 640.0
//! v0 = 360.0
//!
//! [noise]
//! sigma_range_m = 0.02
//! sigma_theta_rad = 0.005
//! sigma_phi_rad = 0.005
//!
//! [ransac]
//! threshold = 7.815
//!
//! [solver]
//! max_iterations = 100
//! ```
//!
//! Every table and key is optional; unknown keys are rejected.
//! Precedence is command-line flags, then this file, then the blocks of the
//! correspondence file.

use std::path::Path;

use radcal_core::simulation::PointRegion;
use radcal_core::{RansacOptions, SolveOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::input::{IntrinsicsBlock, NoiseBlock};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "RADCAL_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub intrinsics: Option<IntrinsicsBlock>,
    pub noise: Option<NoiseBlock>,
    #[serde(default)]
    pub ransac: RansacConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RansacConfig {
    pub confidence: Option<f64>,
    pub min_inlier_ratio: Option<f64>,
    pub threshold: Option<f64>,
    pub max_trials_cap: Option<usize>,
    pub max_degenerate: Option<usize>,
    pub polish: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: Option<usize>,
    pub cost_tolerance: Option<f64>,
    pub param_tolerance: Option<f64>,
    pub initial_damping: Option<f64>,
}

/// Overrides of the simulation defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub pixel_noise_sigma: Option<f64>,
    /// Ground-truth translation in meters.
    pub translation_m: Option<[f64; 3]>,
    /// Rotation offset about the camera's vertical axis, in degrees.
    pub offset_deg: Option<f64>,
    pub region: Option<PointRegion>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path` if given, else an empty configuration.
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        let d = SolveOptions::default();
        let s = &self.solver;
        let opts = SolveOptions {
            max_iterations: s.max_iterations.unwrap_or(d.max_iterations),
            cost_tolerance: s.cost_tolerance.unwrap_or(d.cost_tolerance),
            param_tolerance: s.param_tolerance.unwrap_or(d.param_tolerance),
            initial_damping: s.initial_damping.unwrap_or(d.initial_damping),
        };
        opts.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(opts)
    }

    /// RANSAC options; `seed` overrides the configured seed.
    pub fn ransac_options(&self, seed: Option<u64>) -> Result<RansacOptions> {
        let d = RansacOptions::default();
        let r = &self.ransac;
        let opts = RansacOptions {
            confidence: r.confidence.unwrap_or(d.confidence),
            min_inlier_ratio: r.min_inlier_ratio.unwrap_or(d.min_inlier_ratio),
            threshold: r.threshold.unwrap_or(d.threshold),
            max_trials_cap: r.max_trials_cap.unwrap_or(d.max_trials_cap),
            max_degenerate: r.max_degenerate.unwrap_or(d.max_degenerate),
            polish: r.polish.unwrap_or(d.polish),
            rng_seed: seed.or(r.seed).unwrap_or(d.rng_seed),
            solver: self.solve_options()?,
            ..d
        };
        opts.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(opts)
    }
}
