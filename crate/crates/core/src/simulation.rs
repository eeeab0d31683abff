//! Synthetic scenes and the Monte-Carlo consistency experiment.
//!
//! Seeds: every trial of an experiment runs on its own scene seed
//! `derive_seed(master, n, trial)` (a splitmix64 mix), so any record can be
//! reproduced alone with [`run_trial`]. All solvers of one trial share the
//! scene and the linear initialization.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, PI};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_to_spherical, project, rotation_error, translation_error, CameraIntrinsics,
    CartesianPoint, PixelPoint, Pose, SphericalPoint,
};
use crate::noise::NoiseSpec;
use crate::solvers::{refine, solve_linear_init, Correspondence, SolveOptions, SolverKind};

/// Resampling attempts allowed per requested point.
const ATTEMPTS_PER_POINT: usize = 1000;

/// Stream tags mixed into a scene seed for auxiliary generators.
const PIXEL_STREAM: u64 = 0x0070_6978_656c;
const OUTLIER_STREAM: u64 = 0x6f75_746c;

/// Where true radar-frame points are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRegion {
    /// Uniform in each spherical coordinate over the given intervals.
    /// Azimuth bounds may be negative; samples are wrapped into `[0, 2π)`.
    Shell {
        range: [f64; 2],
        elevation: [f64; 2],
        azimuth: [f64; 2],
    },
    /// Uniform in an axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Default for PointRegion {
    fn default() -> Self {
        PointRegion::Shell {
            range: [2.0, 15.0],
            elevation: [FRAC_PI_3, 2.0 * FRAC_PI_3],
            azimuth: [-FRAC_PI_4, FRAC_PI_4],
        }
    }
}

impl PointRegion {
    fn validate(&self) -> Result<()> {
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        let ok = match self {
            PointRegion::Shell {
                range,
                elevation,
                azimuth,
            } => {
                ordered(range[0], range[1])
                    && range[0] > 0.0
                    && ordered(elevation[0], elevation[1])
                    && elevation[0] >= 0.0
                    && elevation[1] <= PI
                    && ordered(azimuth[0], azimuth[1])
            }
            PointRegion::Box { min, max } => (0..3).all(|i| ordered(min[i], max[i])),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOption(format!(
                "invalid point region {self:?}"
            )))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vector3<f64>> {
        let uniform = |rng: &mut ChaCha8Rng, b: [f64; 2]| {
            if b[0] == b[1] {
                b[0]
            } else {
                rng.gen_range(b[0]..b[1])
            }
        };
        match self {
            PointRegion::Shell {
                range,
                elevation,
                azimuth,
            } => {
                let rho = uniform(rng, *range);
                let theta = uniform(rng, *elevation);
                let phi = uniform(rng, *azimuth);
                let p = SphericalPoint::from_unwrapped(rho, theta, phi).ok()?;
                Some(*p.to_cartesian().coords())
            }
            PointRegion::Box { min, max } => Some(Vector3::new(
                uniform(rng, [min[0], max[0]]),
                uniform(rng, [min[1], max[1]]),
                uniform(rng, [min[2], max[2]]),
            )),
        }
    }
}

/// Maps radar axes (x forward, y left, z up) to camera axes (x right,
/// y down, z forward).
pub fn radar_to_camera_axes() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, -1.0, 0.0, //
        0.0, 0.0, -1.0, //
        1.0, 0.0, 0.0,
    ))
}

/// The default ground truth: a 30° rotation about the camera's vertical
/// axis on top of the axis permutation, translation (0.1, 0.05, 0.2) m.
pub fn default_pose() -> Pose {
    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), 30f64.to_radians());
    Pose::from_parts(yaw * radar_to_camera_axes(), Vector3::new(0.1, 0.05, 0.2))
}

/// σ_ρ = 0.02 m, σ_θ = σ_φ = 0.005 rad.
pub fn default_noise() -> NoiseSpec {
    NoiseSpec::new(0.02, 0.005, 0.005).expect("valid constants")
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 640.0, 360.0).expect("valid constants")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub n_points: usize,
    pub pose_gt: Pose,
    pub noise: NoiseSpec,
    /// Standard deviation of Gaussian pixel noise; 0 disables it.
    pub pixel_noise_sigma: f64,
    pub region: PointRegion,
    pub intrinsics: CameraIntrinsics,
    pub rng_seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_points: 10,
            pose_gt: default_pose(),
            noise: default_noise(),
            pixel_noise_sigma: 0.0,
            region: PointRegion::default(),
            intrinsics: default_intrinsics(),
            rng_seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 4 {
            return Err(Error::TooFewPoints {
                needed: 4,
                got: self.n_points,
            });
        }
        if !(self.pixel_noise_sigma.is_finite() && self.pixel_noise_sigma >= 0.0) {
            return Err(Error::InvalidOption(format!(
                "pixel noise must be non-negative, got {}",
                self.pixel_noise_sigma
            )));
        }
        self.region.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Noisy spherical measurements with noise-free (or pixel-noised)
    /// projections of the true points.
    pub correspondences: Vec<Correspondence>,
    /// True radar-frame points.
    pub truth: Vec<CartesianPoint>,
    pub pose_gt: Pose,
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

pub fn generate_scene(spec: &ScenarioSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    // A separate stream, so enabling pixel noise leaves the points unchanged.
    let mut pixel_rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.rng_seed ^ PIXEL_STREAM));
    let (d_rho, d_theta, d_phi) = (
        normal(spec.noise.sigma_range()),
        normal(spec.noise.sigma_theta()),
        normal(spec.noise.sigma_phi()),
    );
    let d_pixel = normal(spec.pixel_noise_sigma);
    let budget = ATTEMPTS_PER_POINT * spec.n_points;
    let mut attempts = 0;
    let mut correspondences = Vec::with_capacity(spec.n_points);
    let mut truth = Vec::with_capacity(spec.n_points);

    while correspondences.len() < spec.n_points {
        attempts += 1;
        if attempts > budget {
            return Err(Error::SceneGeneration(format!(
                "only {} of {} points visible after {budget} draws",
                correspondences.len(),
                spec.n_points
            )));
        }
        let Some(p) = spec.region.sample(&mut rng) else {
            continue;
        };
        let Ok(point) = CartesianPoint::from_vector(p) else {
            continue;
        };
        let Ok(pixel) = project(&point, &spec.pose_gt, &spec.intrinsics) else {
            continue;
        };
        let Ok(exact) = cartesian_to_spherical(&point) else {
            continue;
        };
        let rho = exact.range() + d_rho.sample(&mut rng);
        let theta = exact.elevation() + d_theta.sample(&mut rng);
        let phi = exact.azimuth() + d_phi.sample(&mut rng);
        let Ok(measured) = SphericalPoint::from_unwrapped(rho, theta, phi) else {
            continue;
        };
        let pixel = if spec.pixel_noise_sigma > 0.0 {
            PixelPoint::new(
                pixel.u + d_pixel.sample(&mut pixel_rng),
                pixel.v + d_pixel.sample(&mut pixel_rng),
            )?
        } else {
            pixel
        };
        correspondences.push(Correspondence::new(measured, pixel));
        truth.push(point);
    }
    Ok(Scene {
        correspondences,
        truth,
        pose_gt: spec.pose_gt,
    })
}

/// A scene of `spec.n_points` inliers plus `n_outliers` gross outliers at
/// random positions. Each outlier pairs a fresh region point with a pixel
/// drawn uniformly over the image `[0, 2u0] × [0, 2v0]`. Returns the scene
/// and the sorted outlier indices.
pub fn generate_contaminated_scene(
    spec: &ScenarioSpec,
    n_outliers: usize,
) -> Result<(Scene, Vec<usize>)> {
    let clean = generate_scene(spec)?;
    let total = spec.n_points + n_outliers;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.rng_seed ^ OUTLIER_STREAM));
    let mut outliers = index::sample(&mut rng, total, n_outliers).into_vec();
    outliers.sort_unstable();
    let k = &spec.intrinsics;
    let mut inliers = clean.correspondences.into_iter().zip(clean.truth);
    let mut correspondences = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    let mut next_outlier = outliers.iter().peekable();
    for i in 0..total {
        if next_outlier.peek() == Some(&&i) {
            next_outlier.next();
            let point = loop {
                let Some(p) = spec.region.sample(&mut rng) else {
                    continue;
                };
                if let Ok(sph) = cartesian_to_spherical(&CartesianPoint::from_vector(p)?) {
                    break sph;
                }
            };
            let pixel = PixelPoint::new(
                rng.gen_range(0.0..=2.0 * k.u0().max(1.0)),
                rng.gen_range(0.0..=2.0 * k.v0().max(1.0)),
            )?;
            correspondences.push(Correspondence::new(point, pixel));
            truth.push(point.to_cartesian());
        } else {
            let (c, p) = inliers.next().expect("inlier count matches");
            correspondences.push(c);
            truth.push(p);
        }
    }
    Ok((
        Scene {
            correspondences,
            truth,
            pose_gt: spec.pose_gt,
        },
        outliers,
    ))
}

/// One solver's outcome on one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n_points: usize,
    pub solver: SolverKind,
    pub seed: u64,
    /// `None` when the solve returned an error.
    pub rotation_error: Option<f64>,
    pub translation_error: Option<f64>,
    /// False for errors and for refinements that hit their iteration cap.
    pub converged: bool,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scene seed of trial `trial` at `n` points under `master`.
pub fn derive_seed(master: u64, n: usize, trial: usize) -> u64 {
    splitmix64(master ^ splitmix64(((n as u64) << 32) ^ trial as u64))
}

#[allow(clippy::too_many_arguments)]
fn solve_all(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    pose_gt: &Pose,
    solvers: &[SolverKind],
    opts: &SolveOptions,
    n_points: usize,
    seed: u64,
) -> Vec<TrialRecord> {
    let init = solve_linear_init(corrs, k);
    solvers
        .iter()
        .map(|&solver| {
            let outcome = init
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|init| refine(solver, corrs, k, noise, init, opts));
            match outcome {
                Ok(report) => TrialRecord {
                    n_points,
                    solver,
                    seed,
                    rotation_error: Some(rotation_error(
                        report.pose.rotation(),
                        pose_gt.rotation(),
                    )),
                    translation_error: Some(translation_error(
                        report.pose.translation(),
                        pose_gt.translation(),
                    )),
                    converged: report.converged,
                },
                Err(_) => TrialRecord {
                    n_points,
                    solver,
                    seed,
                    rotation_error: None,
                    translation_error: None,
                    converged: false,
                },
            }
        })
        .collect()
}

/// Runs every solver on the scene `base` with `n` points and seed `seed`.
pub fn run_trial(
    base: &ScenarioSpec,
    n: usize,
    seed: u64,
    solvers: &[SolverKind],
    opts: &SolveOptions,
) -> Result<Vec<TrialRecord>> {
    let spec = ScenarioSpec {
        n_points: n,
        rng_seed: seed,
        ..*base
    };
    let scene = generate_scene(&spec)?;
    Ok(solve_all(
        &scene.correspondences,
        &spec.intrinsics,
        &spec.noise,
        &spec.pose_gt,
        solvers,
        opts,
        n,
        seed,
    ))
}

/// `[10, 20, 40, ..., 1280]`.
pub fn default_schedule() -> Vec<usize> {
    (0..8).map(|i| 10 << i).collect()
}

fn canonical_order(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        (a.n_points, a.solver.as_str(), a.seed).cmp(&(b.n_points, b.solver.as_str(), b.seed))
    });
}

/// The full grid of `schedule × trials × solvers`, using `base.rng_seed` as
/// the master seed. Records are sorted by `(n, solver name, seed)`.
pub fn run_consistency_experiment(
    base: &ScenarioSpec,
    schedule: &[usize],
    trials_per_n: usize,
    solvers: &[SolverKind],
    opts: &SolveOptions,
) -> Result<Vec<TrialRecord>> {
    if schedule.is_empty() || trials_per_n == 0 || solvers.is_empty() {
        return Err(Error::InvalidOption(
            "schedule, trial count and solver list must be non-empty".into(),
        ));
    }
    opts.validate()?;
    for &n in schedule {
        ScenarioSpec {
            n_points: n,
            ..*base
        }
        .validate()?;
    }
    let jobs: Vec<(usize, usize)> = schedule
        .iter()
        .flat_map(|&n| (0..trials_per_n).map(move |t| (n, t)))
        .collect();
    let chunks = jobs
        .par_iter()
        .map(|&(n, t)| run_trial(base, n, derive_seed(base.rng_seed, n, t), solvers, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<TrialRecord> = chunks.into_iter().flatten().collect();
    canonical_order(&mut records);
    Ok(records)
}

/// Repeatedly solves random `k`-subsets of `corrs`. Repeat `r` draws its
/// subset from `derive_seed(seed, k, r)`, which is also its record seed.
#[allow(clippy::too_many_arguments)]
pub fn subsample_experiment(
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    noise: &NoiseSpec,
    pose_gt: &Pose,
    k: usize,
    repeats: usize,
    solvers: &[SolverKind],
    seed: u64,
    opts: &SolveOptions,
) -> Result<Vec<TrialRecord>> {
    if k < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: k });
    }
    if k > corrs.len() {
        return Err(Error::InvalidOption(format!(
            "cannot draw {k} of {} correspondences",
            corrs.len()
        )));
    }
    opts.validate()?;
    let chunks: Vec<Vec<TrialRecord>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, k, r);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut idx = index::sample(&mut rng, corrs.len(), k).into_vec();
            idx.sort_unstable();
            let subset: Vec<Correspondence> = idx.iter().map(|&i| corrs[i]).collect();
            solve_all(&subset, intrinsics, noise, pose_gt, solvers, opts, k, s)
        })
        .collect();
    let mut records: Vec<TrialRecord> = chunks.into_iter().flatten().collect();
    canonical_order(&mut records);
    Ok(records)
}
