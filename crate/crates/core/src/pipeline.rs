//! End-to-end odometry pipeline: propagate, associate, update, insert,
//! merge — one scan at a time, with per-scan diagnostics and map statistics.
//!
//! Scan ingestion runs on a worker thread with a depth-1 hand-off queue so
//! decoding overlaps processing; everything downstream is scan-sequential
//! and deterministic.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use crate::config::{Mode, PipelineConfig};
use crate::filter::{
    associate, cv_propagate, iekf_update, imu_propagate, init_from_stationary_imu, ImuSample,
    NavState,
};
use crate::geom::{CovPoint, Frame};
use crate::io::{load_scans, read_imu, DataError, TrajectoryFile};
use crate::map::{MapStats, VoxelMap};
use crate::merge::MergeReport;
use crate::noise::{decompose, point_cov_sensor, point_cov_world, LidarNoiseSpec};
use crate::sim::ScanFrame;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("data error at scan {scan}: {cause}")]
    Data { scan: usize, cause: DataError },
    #[error("numerical failure at scan {scan}: {cause}")]
    Numerical { scan: usize, cause: String },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } => 3,
            PipelineError::Numerical { .. } => 4,
        }
    }
}

/// One line of the structured run log.
#[derive(Debug, Clone, Serialize)]
pub struct ScanDiag {
    pub scan: usize,
    pub t: f64,
    pub points: usize,
    pub matches: usize,
    pub iterations: usize,
    pub cost_initial: f64,
    pub cost_final: f64,
    /// Objective after each accepted update iterate.
    pub cost_trace: Vec<f64>,
    pub update_aborted: bool,
    pub newly_converged: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeReport>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct TimingStats {
    pub scans: usize,
    pub total_ms: f64,
    pub mean_scan_ms: f64,
    pub max_scan_ms: f64,
}

/// Everything a run produces before anything is written to disk.
#[derive(Debug)]
pub struct RunOutput {
    pub trajectory: TrajectoryFile,
    pub diagnostics: Vec<ScanDiag>,
    pub map_stats: MapStats,
    pub timing: TimingStats,
    pub final_state: NavState,
}

/// Convert one scan's raw points into sensor-frame covariant points,
/// dropping returns outside the configured range band.
pub fn scan_to_cov_points(frame: &ScanFrame, cfg: &PipelineConfig) -> Vec<CovPoint> {
    let noise = if cfg.sensor.override_noise
        || (frame.noise.sigma_range == 0.0 && frame.noise.sigma_bearing == 0.0 && cfg.sensor.override_noise)
    {
        LidarNoiseSpec::new(cfg.sensor.sigma_range, cfg.sensor.sigma_bearing)
    } else {
        frame.noise
    };
    frame
        .points
        .iter()
        .filter_map(|p| {
            let dec = decompose(p).ok()?;
            if dec.depth < cfg.sensor.min_range || dec.depth > cfg.sensor.max_range {
                return None;
            }
            Some(CovPoint::new(*p, point_cov_sensor(&dec, &noise), Frame::Sensor))
        })
        .collect()
}

/// Initial 18x18 error covariance from the configured per-block sigmas.
pub fn initial_covariance(init: &crate::config::InitConfig) -> crate::filter::Mat18 {
    use crate::filter::{DIM_BA, DIM_BG, DIM_GRAV, DIM_THETA, DIM_TRANS, DIM_VEL};
    let mut cov = crate::filter::Mat18::zeros();
    for (offset, sigma) in [
        (DIM_THETA, init.sigma_rot),
        (DIM_TRANS, init.sigma_trans),
        (DIM_VEL, init.sigma_vel),
        (DIM_BG, init.sigma_bias_gyro),
        (DIM_BA, init.sigma_bias_acc),
        (DIM_GRAV, init.sigma_gravity),
    ] {
        for i in 0..3 {
            cov[(offset + i, offset + i)] = sigma * sigma;
        }
    }
    cov
}

/// IMU samples strictly inside `(from, to]`.
fn imu_window(samples: &[ImuSample], from: f64, to: f64) -> &[ImuSample] {
    let start = samples.partition_point(|s| s.t <= from);
    let end = samples.partition_point(|s| s.t <= to);
    &samples[start..end]
}

/// Run the pipeline over in-memory scans. `imu` may be empty in
/// lidar-only mode.
pub fn run_on_scans(
    cfg: &PipelineConfig,
    scans: impl Iterator<Item = Result<ScanFrame, DataError>>,
    imu: &[ImuSample],
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if cfg.mode == Mode::LidarInertial && imu.is_empty() {
        return Err(crate::config::ConfigError::Invalid(
            "lidar_inertial mode needs IMU samples (paths.imu)".into(),
        )
        .into());
    }

    let mut map = VoxelMap::new(cfg.map.clone());
    let mut state = NavState::new(0.0);
    state.cov = initial_covariance(&cfg.init);
    if cfg.mode == Mode::LidarInertial && cfg.init.gravity_align_secs > 0.0 {
        let t0 = imu.first().map(|s| s.t).unwrap_or(0.0);
        let window: Vec<ImuSample> = imu
            .iter()
            .copied()
            .take_while(|s| s.t <= t0 + cfg.init.gravity_align_secs)
            .collect();
        init_from_stationary_imu(&mut state, &window);
    }

    let mut trajectory = TrajectoryFile::default();
    let mut diagnostics = Vec::new();
    let started = Instant::now();
    let mut max_scan_ms: f64 = 0.0;

    for (index, frame) in scans.enumerate() {
        let frame = frame.map_err(|cause| PipelineError::Data { scan: index, cause })?;
        let scan_start = Instant::now();

        // 1. propagate the prior to the scan stamp
        let prior = match cfg.mode {
            Mode::LidarInertial => {
                let window = imu_window(imu, state.t, frame.t);
                imu_propagate(&state, window, &cfg.imu_noise).map_err(|e| match e {
                    crate::filter::OdomError::NonMonotonicImu(_) => PipelineError::Data {
                        scan: index,
                        cause: DataError::Other(e.to_string()),
                    },
                    crate::filter::OdomError::NonFinite(_) => {
                        PipelineError::Numerical { scan: index, cause: e.to_string() }
                    }
                })?
            }
            Mode::LidarOnly => cv_propagate(&state, frame.t, &cfg.cv_noise),
        };

        // 2. associate and update
        let points = scan_to_cov_points(&frame, cfg);
        let matches = associate(&map, &points, &prior, &cfg.association);
        let (posterior, update_diag) = iekf_update(&prior, &matches, &cfg.update);
        if !posterior.trans.iter().all(|v| v.is_finite()) {
            return Err(PipelineError::Numerical {
                scan: index,
                cause: "non-finite pose estimate".into(),
            });
        }

        // 3. map insertion under the posterior pose
        let pose = posterior.pose();
        let pu = posterior.pose_uncertainty();
        let world: Vec<CovPoint> =
            points.iter().map(|p| point_cov_world(p, &pose, &pu)).collect();
        let newly_converged = map.insert_scan(&world);

        // 4. merge pass
        let merge = if cfg.merging && !newly_converged.is_empty() {
            Some(map.merge_converged(&newly_converged, &cfg.merge))
        } else {
            None
        };

        state = posterior;
        trajectory.push_pose(frame.t, &pose);
        let wall_ms = scan_start.elapsed().as_secs_f64() * 1e3;
        max_scan_ms = max_scan_ms.max(wall_ms);
        diagnostics.push(ScanDiag {
            scan: index,
            t: frame.t,
            points: points.len(),
            matches: update_diag.matches,
            iterations: update_diag.iterations,
            cost_initial: update_diag.cost_initial,
            cost_final: update_diag.cost_final,
            cost_trace: update_diag.cost_trace,
            update_aborted: update_diag.aborted,
            newly_converged: newly_converged.len(),
            merge,
            wall_ms,
        });
    }

    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let scans = diagnostics.len();
    Ok(RunOutput {
        trajectory,
        map_stats: map.stats(),
        timing: TimingStats {
            scans,
            total_ms,
            mean_scan_ms: if scans > 0 { total_ms / scans as f64 } else { 0.0 },
            max_scan_ms,
        },
        diagnostics,
        final_state: state,
    })
}

/// Run from the files named in the config, streaming scans through a
/// depth-1 hand-off queue.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let scans_path = cfg.paths.scans.clone().ok_or_else(|| {
        crate::config::ConfigError::Invalid("paths.scans is required for a run".into())
    })?;
    let imu = match (&cfg.mode, &cfg.paths.imu) {
        (Mode::LidarInertial, Some(p)) => {
            read_imu(p).map_err(|cause| PipelineError::Data { scan: 0, cause })?
        }
        (Mode::LidarInertial, None) => {
            return Err(crate::config::ConfigError::Invalid(
                "lidar_inertial mode needs paths.imu".into(),
            )
            .into())
        }
        (Mode::LidarOnly, _) => Vec::new(),
    };

    let text_noise = LidarNoiseSpec::new(cfg.sensor.sigma_range, cfg.sensor.sigma_bearing);
    let reader = load_scans(&scans_path, text_noise)
        .map_err(|cause| PipelineError::Data { scan: 0, cause })?;

    // read-ahead of exactly one scan
    let (tx, rx) = mpsc::sync_channel::<Result<ScanFrame, DataError>>(1);
    let feeder = std::thread::spawn(move || {
        for frame in reader {
            if tx.send(frame).is_err() {
                break;
            }
        }
    });
    let result = run_on_scans(cfg, rx.into_iter(), &imu);
    let _ = feeder.join();
    result
}

/// Write trajectory, JSONL diagnostics and the map stats report into
/// `dir`, returning the trajectory path.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::Data { scan: 0, cause: e.into() })?;
    let traj_path = dir.join("trajectory.txt");
    out.trajectory
        .write(&traj_path)
        .map_err(|cause| PipelineError::Data { scan: 0, cause })?;

    let mut log = String::new();
    for d in &out.diagnostics {
        log.push_str(&serde_json::to_string(d).expect("diag serializes"));
        log.push('\n');
    }
    std::fs::write(dir.join("diagnostics.jsonl"), log)
        .map_err(|e| PipelineError::Data { scan: 0, cause: e.into() })?;

    let mut stats = out.map_stats.report();
    stats.push_str(&format!(
        "timing scans={} total_ms={:.3} mean_scan_ms={:.3} max_scan_ms={:.3}\n",
        out.timing.scans, out.timing.total_ms, out.timing.mean_scan_ms, out.timing.max_scan_ms
    ));
    std::fs::write(dir.join("map_stats.txt"), stats)
        .map_err(|e| PipelineError::Data { scan: 0, cause: e.into() })?;
    Ok(traj_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::sim::{box_scene, DatasetSpec, ImuGenSpec, RayPattern, TrajectorySpec};

    fn small_dataset(seed: u64) -> DatasetSpec {
        DatasetSpec {
            scene: box_scene(4.25, 4.25, 2.5),
            traj: TrajectorySpec::Circle {
                radius: 1.5,
                height: 1.2,
                lead_in: 1.0,
                duration: 4.0,
                yaw_follow: false,
            },
            pattern: RayPattern::Spinning { rings: 40, azimuths: 80, elev_min: -0.85, elev_max: 0.85 },
            noise: LidarNoiseSpec::new(0.01, 0.0005),
            scan_rate: 10.0,
            max_range: 60.0,
            imu: ImuGenSpec { rate: 200.0, gyro_std: 1e-4, accel_std: 1e-3, ..Default::default() },
            seed,
        }
    }

    fn run_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.sensor.min_range = 0.2;
        cfg.imu_noise.gyro_std = 1e-4;
        cfg.imu_noise.accel_std = 1e-3;
        cfg
    }

    #[test]
    fn pipeline_tracks_a_short_circle() {
        let data = small_dataset(11);
        let scans = data.scans();
        let imu = data.imu_samples(&Vec3::new(0.0, 0.0, -9.81));
        let cfg = run_config();
        let out = run_on_scans(&cfg, scans.into_iter().map(Ok), &imu).unwrap();
        assert_eq!(out.trajectory.rows.len(), data.scan_count());

        let gt = TrajectoryFile::from_poses(&data.gt_trajectory());
        let ate = crate::eval::compute_ate(&out.trajectory, &gt, true).unwrap();
        assert!(ate < 0.05, "short-run ate {ate}");
        // map got built and merged
        let stats = out.map_stats;
        assert!(stats.converged_roots + stats.merged > 50);
        assert!(stats.merged > stats.converged_roots);
    }

    #[test]
    fn deterministic_outputs_byte_for_byte() {
        use tempfile::tempdir;
        let data = small_dataset(7);
        let dir = tempdir().unwrap();
        let scans_path = dir.path().join("scans.bin");
        let imu_path = dir.path().join("imu.txt");
        crate::io::write_scans(&scans_path, &data.scans()).unwrap();
        crate::io::write_imu(&imu_path, &data.imu_samples(&Vec3::new(0.0, 0.0, -9.81))).unwrap();

        let mut cfg = run_config();
        cfg.paths.scans = Some(scans_path);
        cfg.paths.imu = Some(imu_path);

        let out1 = run_pipeline(&cfg).unwrap();
        let out2 = run_pipeline(&cfg).unwrap();
        let d1 = dir.path().join("r1");
        let d2 = dir.path().join("r2");
        let t1 = write_outputs(&out1, &d1).unwrap();
        let t2 = write_outputs(&out2, &d2).unwrap();
        assert_eq!(std::fs::read(t1).unwrap(), std::fs::read(t2).unwrap());
    }

    #[test]
    fn lidar_inertial_without_imu_is_config_error() {
        let cfg = run_config();
        let out = run_on_scans(&cfg, std::iter::empty(), &[]);
        assert!(matches!(out, Err(PipelineError::Config(_))));
        assert_eq!(out.unwrap_err().exit_code(), 2);
    }

    #[test]
    fn clutter_does_not_break_tracking() {
        // messy non-planar returns freeze their voxels and never match;
        // the pose should track about as well as the clean run
        let mut data = small_dataset(21);
        data.scene.clutter.push(crate::sim::ClutterBlob {
            center: Vec3::new(2.5, -2.0, 1.0),
            sigma: 0.5,
            points_per_scan: 300,
        });
        let scans = data.scans();
        let imu = data.imu_samples(&Vec3::new(0.0, 0.0, -9.81));
        let out = run_on_scans(&run_config(), scans.into_iter().map(Ok), &imu).unwrap();
        let gt = TrajectoryFile::from_poses(&data.gt_trajectory());
        let ate = crate::eval::compute_ate(&out.trajectory, &gt, true).unwrap();
        assert!(ate < 0.05, "clutter run ate {ate}");
        assert!(out.map_stats.non_planar > 0, "clutter voxels should freeze as non-planar");
    }

    #[test]
    fn lidar_only_mode_runs_without_imu() {
        let mut data = small_dataset(13);
        data.traj = TrajectorySpec::Stationary {
            pose: crate::geom::RigidTransform::new(
                crate::geom::Mat3::identity(),
                Vec3::new(0.0, 0.0, 1.2),
            ),
            duration: 3.0,
        };
        let mut cfg = run_config();
        cfg.mode = Mode::LidarOnly;
        cfg.cv_noise.accel_std = 0.1;
        cfg.cv_noise.gyro_std = 0.02;
        let out = run_on_scans(&cfg, data.scans().into_iter().map(Ok), &[]).unwrap();
        let last = out.trajectory.rows.last().unwrap();
        assert!((last.trans - Vec3::zeros()).norm() < 0.05);
    }
}
