//! The `calibrate`, `simulate` and `validate` commands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{Rotation3, Vector3};
use radcal_core::simulation::{
    default_intrinsics, default_noise, default_schedule, radar_to_camera_axes,
};
use radcal_core::solvers::{
    refine, solve_linear_init, AlgebraicModel, ReprojectionModel, ResidualModel, ScaleMode,
    UncertainPointModel,
};
use radcal_core::{
    ransac_solve, run_consistency_experiment, CameraIntrinsics, Correspondence, NoiseSpec, Pose,
    ScenarioSpec, SolverKind,
};

use crate::config::{Config, CONFIG_ENV};
use crate::error::{exit, CliError, Result};
use crate::input::{CorrespondenceFile, IntrinsicsBlock, NoiseBlock};
use crate::output::{CalibrationOutput, SolverMetadata};
use crate::records::trials_to_string;
use crate::validate::validate_text;

#[derive(Debug, Parser)]
#[command(name = "radcal", version, about = "Radar-camera extrinsic calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the radar-to-camera pose from a correspondence file.
    Calibrate(CalibrateArgs),
    /// Run the Monte-Carlo consistency experiment and write trial records.
    Simulate(SimulateArgs),
    /// Check a correspondence file without modifying it.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Intrinsics and noise overrides shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct SensorFlags {
    #[arg(long)]
    pub fx: Option<f64>,
    #[arg(long)]
    pub fy: Option<f64>,
    #[arg(long)]
    pub u0: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub sigma_range: Option<f64>,
    #[arg(long)]
    pub sigma_theta: Option<f64>,
    #[arg(long)]
    pub sigma_phi: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// TOML configuration file.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    pub ransac: Switch,
    #[arg(long, default_value = "3dupnp", value_parser = parse_refiner)]
    pub solver: SolverKind,
    /// RANSAC seed (overrides the configuration).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Read spherical angles in degrees.
    #[arg(long)]
    pub degrees: bool,
    /// Output path; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub sensor: SensorFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Comma-separated point counts.
    #[arg(long, value_delimiter = ',', default_values_t = default_schedule())]
    pub schedule: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `default`, `zero`, or `SIGMA_RANGE,SIGMA_THETA,SIGMA_PHI`.
    #[arg(long)]
    pub noise: Option<String>,
    /// Pixel noise standard deviation.
    #[arg(long)]
    pub pixel_noise: Option<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "3dupnp,reproj,algebraic",
        value_parser = parse_solver
    )]
    pub solvers: Vec<SolverKind>,
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sensor: SensorFlags,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub degrees: bool,
}

fn parse_solver(s: &str) -> std::result::Result<SolverKind, String> {
    s.parse().map_err(|e: radcal_core::Error| e.to_string())
}

fn parse_refiner(s: &str) -> std::result::Result<SolverKind, String> {
    match parse_solver(s)? {
        SolverKind::Linear => Err("calibrate needs a refiner: 3dupnp, reproj or algebraic".into()),
        kind => Ok(kind),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Per-field precedence: flag, then config, then file block.
fn resolve_intrinsics(
    flags: &SensorFlags,
    config: Option<&IntrinsicsBlock>,
    file: Option<&IntrinsicsBlock>,
) -> Result<Option<CameraIntrinsics>> {
    let pick = |flag: Option<f64>, get: fn(&IntrinsicsBlock) -> f64| {
        flag.or(config.map(get)).or(file.map(get))
    };
    let values = [
        pick(flags.fx, |b| b.fx),
        pick(flags.fy, |b| b.fy),
        pick(flags.u0, |b| b.u0),
        pick(flags.v0, |b| b.v0),
    ];
    match values {
        [None, None, None, None] => Ok(None),
        [Some(fx), Some(fy), Some(u0), Some(v0)] => CameraIntrinsics::new(fx, fy, u0, v0)
            .map(Some)
            .map_err(|e| CliError::Config(e.to_string())),
        _ => Err(CliError::Config("intrinsics are incomplete".into())),
    }
}

fn resolve_noise(
    flags: &SensorFlags,
    config: Option<&NoiseBlock>,
    file: Option<&NoiseBlock>,
) -> Result<Option<NoiseSpec>> {
    let pick =
        |flag: Option<f64>, get: fn(&NoiseBlock) -> f64| flag.or(config.map(get)).or(file.map(get));
    let values = [
        pick(flags.sigma_range, |b| b.sigma_range_m),
        pick(flags.sigma_theta, |b| b.sigma_theta_rad),
        pick(flags.sigma_phi, |b| b.sigma_phi_rad),
    ];
    match values {
        [None, None, None] => Ok(None),
        [Some(r), Some(t), Some(p)] => NoiseSpec::new(r, t, p)
            .map(Some)
            .map_err(|e| CliError::Config(e.to_string())),
        _ => Err(CliError::Config("noise specification is incomplete".into())),
    }
}

fn residuals<const D: usize, M: ResidualModel<D>>(model: &M, pose: &Pose) -> Vec<Option<f64>> {
    (0..model.len())
        .map(|i| (model.depth(pose, i) > 0.0).then(|| model.residual(pose, i).norm_squared()))
        .collect()
}

fn solver_residuals(
    kind: SolverKind,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    pose: &Pose,
) -> Vec<Option<f64>> {
    match kind {
        SolverKind::Reprojection => residuals(&ReprojectionModel::new(corrs, k), pose),
        SolverKind::Algebraic => residuals(&AlgebraicModel::new(corrs, k), pose),
        SolverKind::Uncertain3d | SolverKind::Linear => residuals(
            &UncertainPointModel::new(corrs, k, noise, ScaleMode::default()),
            pose,
        ),
    }
}

/// Runs the calibration pipeline. A solver that stops without converging
/// still yields an output, with `solver.converged = false`.
pub fn calibrate(args: &CalibrateArgs) -> Result<CalibrationOutput> {
    let config = Config::load_optional(args.config.as_deref())?;
    let file = CorrespondenceFile::parse(&read(&args.input)?)?;
    let k = resolve_intrinsics(
        &args.sensor,
        config.intrinsics.as_ref(),
        file.intrinsics.as_ref(),
    )?
    .ok_or_else(|| CliError::Config("no camera intrinsics given".into()))?;
    let use_ransac = args.ransac == Switch::On;
    let noise = match resolve_noise(&args.sensor, config.noise.as_ref(), file.noise.as_ref())? {
        Some(n) => n,
        None if use_ransac || args.solver == SolverKind::Uncertain3d => {
            return Err(CliError::Config(
                "a noise specification is required for 3dupnp and RANSAC".into(),
            ))
        }
        None => NoiseSpec::zero(),
    };
    let solve_opts = config.solve_options()?;
    let corrs = file.to_correspondences(args.degrees)?;
    if corrs.len() < 4 {
        return Err(radcal_core::Error::TooFewPoints {
            needed: 4,
            got: corrs.len(),
        }
        .into());
    }

    let (init, inliers, seed, trials) = if use_ransac {
        let opts = config.ransac_options(args.seed)?;
        let res = ransac_solve(&corrs, &k, &noise, &opts)?;
        (
            res.pose,
            res.inlier_indices,
            Some(opts.rng_seed),
            Some(res.trials_run),
        )
    } else {
        (
            solve_linear_init(&corrs, &k)?,
            (0..corrs.len()).collect(),
            None,
            None,
        )
    };
    let subset: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
    let report = refine(args.solver, &subset, &k, &noise, &init, &solve_opts)?;
    let meta = SolverMetadata {
        name: args.solver.as_str().to_string(),
        ransac: use_ransac,
        seed,
        ransac_trials: trials,
        iterations: report.iterations,
        final_cost: report.final_cost,
        converged: report.converged,
        n_points: corrs.len(),
    };
    let residuals = solver_residuals(args.solver, &corrs, &k, &noise, &report.pose);
    Ok(CalibrationOutput::new(
        &report.pose,
        inliers,
        residuals,
        meta,
    ))
}

fn parse_noise(text: &str) -> Result<NoiseSpec> {
    match text {
        "default" => Ok(default_noise()),
        "zero" => Ok(NoiseSpec::zero()),
        other => {
            let parts: Vec<f64> = other
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("invalid --noise '{other}'")))?;
            match parts[..] {
                [r, t, p] => NoiseSpec::new(r, t, p).map_err(|e| CliError::Usage(e.to_string())),
                _ => Err(CliError::Usage(format!("invalid --noise '{other}'"))),
            }
        }
    }
}

/// The scenario described by flags and configuration.
pub fn scenario(args: &SimulateArgs, config: &Config) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec {
        rng_seed: args.seed,
        ..ScenarioSpec::default()
    };
    spec.intrinsics = resolve_intrinsics(&args.sensor, config.intrinsics.as_ref(), None)?
        .unwrap_or_else(default_intrinsics);
    spec.noise = match &args.noise {
        Some(text) => parse_noise(text)?,
        None => {
            resolve_noise(&args.sensor, config.noise.as_ref(), None)?.unwrap_or_else(default_noise)
        }
    };
    let sc = &config.scenario;
    if let Some(sigma) = args.pixel_noise.or(sc.pixel_noise_sigma) {
        spec.pixel_noise_sigma = sigma;
    }
    if let Some(region) = sc.region {
        spec.region = region;
    }
    let offset = sc.offset_deg.unwrap_or(30.0).to_radians();
    let translation = sc
        .translation_m
        .map_or(*spec.pose_gt.translation(), Vector3::from);
    spec.pose_gt = Pose::from_parts(
        Rotation3::from_axis_angle(&Vector3::y_axis(), offset) * radar_to_camera_axes(),
        translation,
    );
    Ok(spec)
}

/// Runs the experiment and renders the trial CSV.
pub fn simulate(args: &SimulateArgs) -> Result<String> {
    let config = Config::load_optional(args.config.as_deref())?;
    let spec = scenario(args, &config)?;
    let records = run_consistency_experiment(
        &spec,
        &args.schedule,
        args.trials,
        &args.solvers,
        &config.solve_options()?,
    )?;
    Ok(trials_to_string(&records))
}

/// Dispatches a parsed command line and returns the exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Calibrate(args) => {
            let out = calibrate(args)?;
            write(args.output.as_deref(), &(out.to_json() + "\n"))?;
            if out.solver.converged {
                Ok(exit::OK)
            } else {
                Err(CliError::NonConvergence(format!(
                    "{} stopped after {} iterations",
                    out.solver.name, out.solver.iterations
                )))
            }
        }
        Command::Simulate(args) => {
            let csv = simulate(args)?;
            write(args.out.as_deref(), &csv)?;
            Ok(exit::OK)
        }
        Command::Validate(args) => {
            let report = validate_text(&read(&args.input)?, args.degrees);
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{json}");
            Ok(report.exit_code())
        }
    }
}
