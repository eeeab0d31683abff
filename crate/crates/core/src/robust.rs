//! RANSAC around the linear initializer and the 3D refiner.
//!
//! Each trial draws four distinct correspondences, initializes with the
//! linear solver, refines with the 3D residual on the sample and gates every
//! point on its squared Mahalanobis residual. The trial budget shrinks
//! adaptively with the best inlier ratio seen so far.
//!
//! `min_inlier_ratio` is an early-exit target: the loop stops as soon as the
//! best ratio reaches it. It is not a minimum acceptable quality.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::noise::NoiseSpec;
use crate::solvers::{
    solve_3dupnp, solve_linear_init, Correspondence, ScaleMode, SolveOptions, UncertainPointModel,
};

/// The 95% quantile of χ² with 3 degrees of freedom.
pub const CHI2_3DOF_95: f64 = 7.814727903251178;

/// Minimal sample size of the linear initializer.
pub const SAMPLE_SIZE: usize = 4;

/// Upper bound on polish/re-gate rounds after the trial loop.
const POLISH_ROUNDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacOptions {
    /// Probability that at least one all-inlier sample is drawn.
    pub confidence: f64,
    /// Fixed at [`SAMPLE_SIZE`].
    pub sample_size: usize,
    /// Early-exit target for the best inlier ratio.
    pub min_inlier_ratio: f64,
    /// Gate on the squared Mahalanobis residual.
    pub threshold: f64,
    pub max_trials_cap: usize,
    /// Cap on skipped degenerate samples, counted separately from trials.
    pub max_degenerate: usize,
    pub rng_seed: u64,
    /// Re-refine on the best inlier set and re-gate after the loop.
    pub polish: bool,
    pub solver: SolveOptions,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            confidence: 0.99,
            sample_size: SAMPLE_SIZE,
            min_inlier_ratio: 0.5,
            threshold: CHI2_3DOF_95,
            max_trials_cap: 10_000,
            max_degenerate: 10_000,
            rng_seed: 0,
            polish: true,
            solver: SolveOptions::default(),
        }
    }
}

impl RansacOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOption(msg));
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            ));
        }
        if self.sample_size != SAMPLE_SIZE {
            return bad(format!(
                "sample size must be {SAMPLE_SIZE}, got {}",
                self.sample_size
            ));
        }
        if !(self.min_inlier_ratio > 0.0 && self.min_inlier_ratio <= 1.0) {
            return bad(format!(
                "min inlier ratio must lie in (0, 1], got {}",
                self.min_inlier_ratio
            ));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return bad(format!(
                "threshold must be positive, got {}",
                self.threshold
            ));
        }
        if self.max_trials_cap == 0 {
            return bad("trial cap must be positive".into());
        }
        self.solver.validate()
    }
}

/// State after one counted trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialTrace {
    /// Inlier ratio of this trial's model, 0 if refinement failed.
    pub inlier_ratio: f64,
    pub best_ratio: f64,
    /// Trial budget `N` after the update.
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub pose: Pose,
    /// Sorted, unique indices into the input.
    pub inlier_indices: Vec<usize>,
    pub inlier_ratio: f64,
    pub trials_run: usize,
    pub degenerate_samples: usize,
    /// Squared Mahalanobis residual of every point at `pose` (`+∞` if
    /// behind the camera).
    pub residuals: Vec<f64>,
    pub trace: Vec<TrialTrace>,
}

/// `⌈log(1 − p) / log(1 − ρ^s)⌉`. Returns 1 for `ρ ≥ 1`, where the
/// logarithm is singular, and `usize::MAX` for `ρ ≤ 0`.
pub fn adaptive_trial_count(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let all_inlier = inlier_ratio.powi(sample_size as i32);
    if all_inlier <= 0.0 {
        return usize::MAX;
    }
    let n = ((1.0 - confidence).ln() / (-all_inlier).ln_1p()).ceil();
    if n >= usize::MAX as f64 {
        usize::MAX
    } else {
        (n as usize).max(1)
    }
}

fn gate(model: &UncertainPointModel, pose: &Pose, n: usize, tau: f64) -> (Vec<usize>, Vec<f64>) {
    let residuals: Vec<f64> = (0..n)
        .map(|i| model.squared_norm(pose, i).unwrap_or(f64::INFINITY))
        .collect();
    let inliers = (0..n).filter(|&i| residuals[i] < tau).collect();
    (inliers, residuals)
}

fn subset(corrs: &[Correspondence], idx: &[usize]) -> Vec<Correspondence> {
    idx.iter().map(|&i| corrs[i]).collect()
}

pub fn ransac_solve(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    opts: &RansacOptions,
) -> Result<RansacResult> {
    opts.validate()?;
    let n = corrs.len();
    if n < SAMPLE_SIZE {
        return Err(Error::TooFewPoints {
            needed: SAMPLE_SIZE,
            got: n,
        });
    }
    let model = UncertainPointModel::new(corrs, k, noise, ScaleMode::default());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut budget = opts.max_trials_cap;
    let mut trials = 0;
    let mut degenerate = 0;
    let mut best: Option<(Pose, Vec<usize>, Vec<f64>)> = None;
    let mut best_ratio = 0.0;
    let mut trace = Vec::new();

    while trials < budget && best_ratio < opts.min_inlier_ratio {
        let mut sample = index::sample(&mut rng, n, SAMPLE_SIZE).into_vec();
        sample.sort_unstable();
        let sample = subset(corrs, &sample);
        let init = match solve_linear_init(&sample, k) {
            Ok(pose) => pose,
            Err(Error::Degenerate(_)) => {
                degenerate += 1;
                if degenerate >= opts.max_degenerate {
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        trials += 1;
        let ratio = match solve_3dupnp(&sample, k, noise, &init, &opts.solver) {
            Ok(report) => {
                let (inliers, residuals) = gate(&model, &report.pose, n, opts.threshold);
                let ratio = inliers.len() as f64 / n as f64;
                // Strictly better only: ties keep the earliest trial.
                if ratio > best_ratio {
                    best_ratio = ratio;
                    best = Some((report.pose, inliers, residuals));
                    budget = budget.min(adaptive_trial_count(ratio, SAMPLE_SIZE, opts.confidence));
                }
                ratio
            }
            Err(Error::Initialization(_)) => 0.0,
            Err(e) => return Err(e),
        };
        trace.push(TrialTrace {
            inlier_ratio: ratio,
            best_ratio,
            budget,
        });
    }

    let Some((mut pose, mut inliers, mut residuals)) = best else {
        return Err(Error::NoValidModel { trials, degenerate });
    };

    if opts.polish {
        for _ in 0..POLISH_ROUNDS {
            let report = solve_3dupnp(&subset(corrs, &inliers), k, noise, &pose, &opts.solver)?;
            let (next, next_residuals) = gate(&model, &report.pose, n, opts.threshold);
            if next.len() < SAMPLE_SIZE {
                break;
            }
            let stable = next == inliers;
            pose = report.pose;
            inliers = next;
            residuals = next_residuals;
            if stable {
                break;
            }
        }
    }

    Ok(RansacResult {
        pose,
        inlier_ratio: inliers.len() as f64 / n as f64,
        inlier_indices: inliers,
        trials_run: trials,
        degenerate_samples: degenerate,
        residuals,
        trace,
    })
}
