//! `voxmerge` command line: dataset simulation, odometry runs, trajectory
//! evaluation and benchmarking.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use voxmerge::config::PipelineConfig;
use voxmerge::eval::{compute_ate, end_to_end_error, path_length};
use voxmerge::geom::Vec3;
use voxmerge::io::{write_imu, write_scans, TrajectoryFile};
use voxmerge::noise::LidarNoiseSpec;
use voxmerge::pipeline::{run_pipeline, write_outputs, PipelineError};
use voxmerge::sim::{
    box_scene, corridor_scene, floor_scene, DatasetSpec, ImuGenSpec, RayPattern, TrajectorySpec,
};

#[derive(Parser)]
#[command(name = "voxmerge", version, about = "Mergeable voxel-map LiDAR(-inertial) odometry")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (scans, IMU, ground truth, config).
    Simulate(SimulateArgs),
    /// Run the odometry pipeline over a dataset.
    Run(RunArgs),
    /// Evaluate trajectories (ATE, end-to-end error).
    Eval(EvalArgs),
    /// Timed run with a resource report.
    Bench(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenePreset {
    /// Single large floor plane.
    Floor,
    /// Closed box room.
    Box,
    /// Capped corridor.
    Corridor,
    /// Corridor without end walls (degenerate along its axis).
    CorridorOpen,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajPreset {
    Stationary,
    Circle,
    BackForth,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternPreset {
    Spinning,
    Rosette,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "box")]
    scene: ScenePreset,
    #[arg(long, value_enum, default_value = "circle")]
    traj: TrajPreset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total duration in seconds (includes a 1 s stationary lead-in).
    #[arg(long, default_value_t = 11.0)]
    duration: f64,
    #[arg(long, default_value_t = 10.0)]
    scan_rate: f64,
    #[arg(long, default_value_t = 200.0)]
    imu_rate: f64,
    /// Range noise std, meters.
    #[arg(long, default_value_t = 0.02)]
    sigma_range: f64,
    /// Bearing noise std, degrees.
    #[arg(long, default_value_t = 0.05)]
    sigma_bearing_deg: f64,
    #[arg(long, value_enum, default_value = "spinning")]
    pattern: PatternPreset,
    /// Approximate rays per scan.
    #[arg(long, default_value_t = 10000)]
    rays: usize,
    /// Circle radius, meters.
    #[arg(long, default_value_t = 8.0)]
    radius: f64,
    /// Out-and-back length, meters.
    #[arg(long, default_value_t = 30.0)]
    length: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set map.voxel_size=0.25
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Scan file (overrides paths.scans).
    #[arg(long)]
    scans: Option<PathBuf>,
    /// IMU file (overrides paths.imu).
    #[arg(long)]
    imu: Option<PathBuf>,
    /// Output directory (overrides paths.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dump_effective_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory file.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory file (omit for --end-to-end only).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Skip the rigid alignment before computing ATE.
    #[arg(long)]
    no_align: bool,
    /// Report the start-to-end loop error of the estimate.
    #[arg(long)]
    end_to_end: bool,
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Simulate(args) => exit_of(simulate(args)),
        Cmd::Run(args) => exit_of(run(args, false)),
        Cmd::Bench(args) => exit_of(run(args, true)),
        Cmd::Eval(args) => exit_of(eval(args)),
    }
}

fn exit_of(result: Result<(), CliError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: 2 }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: 3 }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self { message: e.to_string(), code: e.exit_code() as u8 }
    }
}

impl From<voxmerge::config::ConfigError> for CliError {
    fn from(e: voxmerge::config::ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<voxmerge::io::DataError> for CliError {
    fn from(e: voxmerge::io::DataError) -> Self {
        Self::data(e.to_string())
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.duration <= 1.0 {
        return Err(CliError::config("duration must exceed the 1 s lead-in"));
    }
    let scene = match args.scene {
        ScenePreset::Floor => floor_scene(10, 10, 0.5),
        ScenePreset::Box => box_scene(10.25, 10.25, 3.0),
        ScenePreset::Corridor => corridor_scene(40.0, 2.25, 3.0, true),
        ScenePreset::CorridorOpen => corridor_scene(40.0, 2.25, 3.0, false),
    };
    scene.validate().map_err(CliError::config)?;

    let traj = match args.traj {
        TrajPreset::Stationary => TrajectorySpec::Stationary {
            pose: default_start_pose(&args),
            duration: args.duration,
        },
        TrajPreset::Circle => TrajectorySpec::Circle {
            radius: args.radius,
            height: 1.5,
            lead_in: 1.0,
            duration: args.duration,
            yaw_follow: true,
        },
        TrajPreset::BackForth => TrajectorySpec::BackAndForth {
            length: args.length,
            height: 1.5,
            lead_in: 1.0,
            duration: args.duration,
            start: Vec3::new(3.0, 0.0, 0.0),
        },
    };

    let pattern = match args.pattern {
        PatternPreset::Spinning => {
            let rings = ((args.rays as f64).sqrt() * 0.7).round().max(4.0) as usize;
            let azimuths = args.rays.div_ceil(rings);
            RayPattern::Spinning { rings, azimuths, elev_min: -0.9, elev_max: 0.9 }
        }
        PatternPreset::Rosette => {
            RayPattern::Rosette { rays: args.rays, elev_min: -0.9, elev_max: 0.9 }
        }
    };

    let spec = DatasetSpec {
        scene,
        traj,
        pattern,
        noise: LidarNoiseSpec::new(args.sigma_range, args.sigma_bearing_deg.to_radians()),
        scan_rate: args.scan_rate,
        max_range: 120.0,
        imu: ImuGenSpec { rate: args.imu_rate, ..Default::default() },
        seed: args.seed,
    };

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::data(e.to_string()))?;
    let scans_path = args.out.join("scans.bin");
    let imu_path = args.out.join("imu.txt");
    let gt_path = args.out.join("gt.txt");
    write_scans(&scans_path, &spec.scans())?;
    write_imu(&imu_path, &spec.imu_samples(&Vec3::new(0.0, 0.0, -9.81)))?;
    TrajectoryFile::from_poses(&spec.gt_trajectory()).write(&gt_path)?;

    // starter config wired to the generated files
    let mut cfg = PipelineConfig::default();
    cfg.paths.scans = Some(scans_path);
    cfg.paths.imu = Some(imu_path);
    cfg.paths.output_dir = Some(args.out.join("out"));
    cfg.seed = args.seed;
    std::fs::write(args.out.join("run.toml"), cfg.to_toml_string())
        .map_err(|e| CliError::data(e.to_string()))?;

    println!(
        "wrote {} scans ({} rays/scan) + imu + ground truth to {}",
        spec.scan_count(),
        spec.pattern.rays_per_scan(),
        args.out.display()
    );
    Ok(())
}

fn default_start_pose(_args: &SimulateArgs) -> voxmerge::geom::RigidTransform {
    voxmerge::geom::RigidTransform::new(voxmerge::geom::Mat3::identity(), Vec3::new(0.0, 0.0, 1.5))
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig, CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(p) = &args.scans {
        overrides.push(format!("paths.scans={}", p.display()));
    }
    if let Some(p) = &args.imu {
        overrides.push(format!("paths.imu={}", p.display()));
    }
    if let Some(p) = &args.out {
        overrides.push(format!("paths.output_dir={}", p.display()));
    }
    Ok(PipelineConfig::from_file_with_overrides(args.config.as_deref(), &overrides)?)
}

fn run(args: RunArgs, bench: bool) -> Result<(), CliError> {
    let cfg = load_config(&args)?;
    if args.dump_effective_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let out = run_pipeline(&cfg)?;
    let out_dir = cfg.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let traj_path = write_outputs(&out, &out_dir)?;

    let aborted = out.diagnostics.iter().filter(|d| d.update_aborted).count();
    let mean_matches = out.diagnostics.iter().map(|d| d.matches as f64).sum::<f64>()
        / out.diagnostics.len().max(1) as f64;
    println!(
        "processed {} scans -> {} (mean {:.0} matches/scan, {} aborted updates)",
        out.timing.scans,
        traj_path.display(),
        mean_matches,
        aborted
    );
    if bench {
        let stats = &out.map_stats;
        println!("--- resource report ---");
        print!("{}", stats.report());
        println!(
            "timing: mean {:.2} ms/scan, max {:.2} ms, total {:.1} ms",
            out.timing.mean_scan_ms, out.timing.max_scan_ms, out.timing.total_ms
        );
        println!(
            "plane storage: {} bytes across {} roots + {} pending fits",
            stats.plane_param_bytes,
            stats.converged_roots,
            stats.accumulating
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let est = TrajectoryFile::read(&args.est)?;
    if let Some(gt_path) = &args.gt {
        let gt = TrajectoryFile::read(gt_path)?;
        let ate = compute_ate(&est, &gt, !args.no_align).map_err(|e| CliError::data(e.to_string()))?;
        println!("ate_m {ate}");
    }
    if args.end_to_end {
        let e2e = end_to_end_error(&est).map_err(|e| CliError::data(e.to_string()))?;
        println!("end_to_end_m {e2e}");
        println!("path_length_m {}", path_length(&est));
    }
    if args.gt.is_none() && !args.end_to_end {
        return Err(CliError::config("nothing to evaluate: pass --gt and/or --end-to-end"));
    }
    Ok(())
}
