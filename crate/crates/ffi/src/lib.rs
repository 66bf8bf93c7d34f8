//! C ABI over the voxmerge library: opaque handles, status codes, plain
//! structs. The generated header lives at `include/voxmerge.h`.
//!
//! Handles returned by the `*_new` functions own their data and must be
//! released with the matching `*_free`. All functions are panic-safe:
//! panics are caught and reported as `VM_STATUS_INTERNAL`.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr::null_mut;

use voxmerge::config::{Mode, PipelineConfig};
use voxmerge::filter::{associate, cv_propagate, iekf_update, imu_propagate, init_from_stationary_imu, ImuSample, NavState};
use voxmerge::geom::{quaternion_from_rotation, CovPoint, Frame, Mat3, Vec3};
use voxmerge::map::{VoxelKey, VoxelMap, VoxelMapConfig};
use voxmerge::merge::MergeConfig;
use voxmerge::noise::{decompose, point_cov_sensor, point_cov_world, LidarNoiseSpec};
use voxmerge::plane::MainAxis;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation (see the matching Rust config rules).
    InvalidArgument = 2,
    /// Lookup found nothing (e.g. no plane at the queried position).
    NotFound = 3,
    /// A numerical step failed (singular system, non-finite values).
    Numerical = 4,
    /// Internal panic; the handle should be discarded.
    Internal = 5,
}

/// Plane parameters under a main axis: `a*x' + b*y' + z' + d = 0` in the
/// permuted frame, `n = [a, b, d]`, row-major 3x3 covariance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VmPlane {
    pub n: [f64; 3],
    pub cov: [f64; 9],
    /// 0 = X, 1 = Y, 2 = Z.
    pub main_axis: u32,
    pub n_points: u64,
}

/// Result of one merge pass.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VmMergeReport {
    pub pairs_tested: u64,
    pub pairs_merged: u64,
    pub roots_before: u64,
    pub roots_after: u64,
    pub bytes_freed: u64,
}

/// Cell counts and storage footprint of the map.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VmMapStats {
    pub accumulating: u64,
    pub converged_roots: u64,
    pub merged: u64,
    pub non_planar: u64,
    pub plane_param_bytes: u64,
    pub retained_point_bytes: u64,
}

/// Pose as translation + unit quaternion (x, y, z, w).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VmPose {
    pub t: f64,
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

/// Opaque mergeable voxel map handle.
pub struct VmMap {
    map: VoxelMap,
    merge: MergeConfig,
    pending: Vec<VoxelKey>,
}

/// Opaque odometry session handle.
pub struct VmOdometry {
    cfg: PipelineConfig,
    map: VoxelMap,
    state: NavState,
    imu: Vec<ImuSample>,
    gravity_initialized: bool,
    started: bool,
}

fn guarded<F: FnOnce() -> VmStatus>(f: F) -> VmStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(VmStatus::Internal)
}

fn plane_out(plane: &voxmerge::plane::PlaneFit) -> VmPlane {
    let mut cov = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            cov[r * 3 + c] = plane.cov[(r, c)];
        }
    }
    VmPlane {
        n: [plane.n.x, plane.n.y, plane.n.z],
        cov,
        main_axis: match plane.axis {
            MainAxis::X => 0,
            MainAxis::Y => 1,
            MainAxis::Z => 2,
        },
        n_points: plane.n_points as u64,
    }
}

/// Create a map with the given voxel size (meters), convergence point
/// count and minimum fit count. Returns null on invalid arguments.
#[no_mangle]
pub extern "C" fn vm_map_new(voxel_size: f64, max_points: u32, min_fit_points: u32) -> *mut VmMap {
    let cfg = VoxelMapConfig {
        voxel_size,
        max_points: max_points as usize,
        min_fit_points: min_fit_points as usize,
        ..Default::default()
    };
    if cfg.validate().is_err() {
        return null_mut();
    }
    Box::into_raw(Box::new(VmMap {
        map: VoxelMap::new(cfg),
        merge: MergeConfig::default(),
        pending: Vec::new(),
    }))
}

/// Release a map handle. Null is ignored.
///
/// # Safety
/// `map` must be null or a pointer returned by [`vm_map_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn vm_map_free(map: *mut VmMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Set the coplanarity gate (chi-square threshold) used by merge passes.
///
/// # Safety
/// `map` must be null or a live handle from [`vm_map_new`].
#[no_mangle]
pub unsafe extern "C" fn vm_map_set_merge_threshold(map: *mut VmMap, chi2: f64) -> VmStatus {
    let Some(handle) = (unsafe { map.as_mut() }) else { return VmStatus::NullArgument };
    if chi2.is_nan() || chi2 <= 0.0 {
        return VmStatus::InvalidArgument;
    }
    handle.merge.chi2_threshold = chi2;
    VmStatus::Ok
}

/// Insert `n` world-frame points given as packed xyz triples. `cov9` may
/// be null (exact points) or hold one row-major 3x3 covariance per point.
/// `newly_converged_out` (nullable) receives the number of cells that
/// converged during this insertion; they are queued for the next
/// `vm_map_merge` call.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles and `cov9` to `9 * n` doubles when
/// non-null.
#[no_mangle]
pub unsafe extern "C" fn vm_map_insert(
    map: *mut VmMap,
    xyz: *const f64,
    cov9: *const f64,
    n: usize,
    newly_converged_out: *mut usize,
) -> VmStatus {
    let Some(handle) = (unsafe { map.as_mut() }) else { return VmStatus::NullArgument };
    if n > 0 && xyz.is_null() {
        return VmStatus::NullArgument;
    }
    guarded(|| {
        let xyz = unsafe { std::slice::from_raw_parts(xyz, 3 * n) };
        let covs =
            if cov9.is_null() { None } else { Some(unsafe { std::slice::from_raw_parts(cov9, 9 * n) }) };
        let points: Vec<CovPoint> = (0..n)
            .map(|i| {
                let pos = Vec3::new(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
                let cov = match covs {
                    Some(c) => Mat3::from_fn(|r, k| c[9 * i + r * 3 + k]),
                    None => Mat3::zeros(),
                };
                CovPoint::new(pos, cov, Frame::World)
            })
            .collect();
        let converged = handle.map.insert_scan(&points);
        if let Some(out) = unsafe { newly_converged_out.as_mut() } {
            *out = converged.len();
        }
        handle.pending.extend(converged);
        VmStatus::Ok
    })
}

/// Merge all cells that converged since the last merge pass.
///
/// # Safety
/// `map` must be null or a live handle; `report_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn vm_map_merge(map: *mut VmMap, report_out: *mut VmMergeReport) -> VmStatus {
    let Some(handle) = (unsafe { map.as_mut() }) else { return VmStatus::NullArgument };
    guarded(|| {
        let pending = std::mem::take(&mut handle.pending);
        let report = handle.map.merge_converged(&pending, &handle.merge);
        if let Some(out) = unsafe { report_out.as_mut() } {
            *out = VmMergeReport {
                pairs_tested: report.pairs_tested as u64,
                pairs_merged: report.pairs_merged as u64,
                roots_before: report.roots_before as u64,
                roots_after: report.roots_after as u64,
                bytes_freed: report.bytes_freed as u64,
            };
        }
        VmStatus::Ok
    })
}

/// Look up the root plane owning the voxel that contains `(x, y, z)`.
///
/// # Safety
/// `map` must be null or a live handle; `plane_out_ptr` null or valid.
#[no_mangle]
pub unsafe extern "C" fn vm_map_query(
    map: *const VmMap,
    x: f64,
    y: f64,
    z: f64,
    plane_out_ptr: *mut VmPlane,
) -> VmStatus {
    let Some(handle) = (unsafe { map.as_ref() }) else { return VmStatus::NullArgument };
    guarded(|| match handle.map.query_plane(&Vec3::new(x, y, z)) {
        Some((plane, _root)) => {
            if let Some(out) = unsafe { plane_out_ptr.as_mut() } {
                *out = plane_out(plane);
            }
            VmStatus::Ok
        }
        None => VmStatus::NotFound,
    })
}

/// Cell counts and storage footprint.
///
/// # Safety
/// `map` must be null or a live handle; `stats_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn vm_map_stats(map: *const VmMap, stats_out: *mut VmMapStats) -> VmStatus {
    let Some(handle) = (unsafe { map.as_ref() }) else { return VmStatus::NullArgument };
    let Some(out) = (unsafe { stats_out.as_mut() }) else { return VmStatus::NullArgument };
    guarded(|| {
        let s = handle.map.stats();
        *out = VmMapStats {
            accumulating: s.accumulating as u64,
            converged_roots: s.converged_roots as u64,
            merged: s.merged as u64,
            non_planar: s.non_planar as u64,
            plane_param_bytes: s.plane_param_bytes as u64,
            retained_point_bytes: s.retained_point_bytes as u64,
        };
        VmStatus::Ok
    })
}

/// Create an odometry session. `config_toml` may be null for defaults or
/// point to a NUL-terminated TOML document using the same schema as the
/// CLI config file. Returns null when the config is invalid.
///
/// # Safety
/// `config_toml` must be null or point to a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vm_odometry_new(config_toml: *const c_char) -> *mut VmOdometry {
    let cfg = if config_toml.is_null() {
        PipelineConfig::default()
    } else {
        let Ok(text) = unsafe { CStr::from_ptr(config_toml) }.to_str() else { return null_mut() };
        match PipelineConfig::from_toml_str(text) {
            Ok(cfg) => cfg,
            Err(_) => return null_mut(),
        }
    };
    let map = VoxelMap::new(cfg.map.clone());
    Box::into_raw(Box::new(VmOdometry {
        state: NavState::new(0.0),
        map,
        cfg,
        imu: Vec::new(),
        gravity_initialized: false,
        started: false,
    }))
}

/// Release an odometry handle. Null is ignored.
///
/// # Safety
/// `odom` must be null or a pointer returned by [`vm_odometry_new`] that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn vm_odometry_free(odom: *mut VmOdometry) {
    if !odom.is_null() {
        drop(unsafe { Box::from_raw(odom) });
    }
}

/// Buffer one IMU sample (body angular rate rad/s, specific force m/s^2).
/// Samples must arrive in time order.
///
/// # Safety
/// `gyro` and `acc` must each point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_odometry_push_imu(
    odom: *mut VmOdometry,
    t: f64,
    gyro: *const f64,
    acc: *const f64,
) -> VmStatus {
    let Some(handle) = (unsafe { odom.as_mut() }) else { return VmStatus::NullArgument };
    if gyro.is_null() || acc.is_null() {
        return VmStatus::NullArgument;
    }
    if let Some(last) = handle.imu.last() {
        if t <= last.t {
            return VmStatus::InvalidArgument;
        }
    }
    let g = unsafe { std::slice::from_raw_parts(gyro, 3) };
    let a = unsafe { std::slice::from_raw_parts(acc, 3) };
    handle.imu.push(ImuSample {
        t,
        gyro: Vec3::new(g[0], g[1], g[2]),
        acc: Vec3::new(a[0], a[1], a[2]),
    });
    VmStatus::Ok
}

/// Process one deskewed scan of `n` sensor-frame points (packed xyz
/// triples, meters) stamped `t`; the updated pose is written to
/// `pose_out`. In `lidar_inertial` mode buffered IMU samples up to `t`
/// drive the prediction.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_odometry_push_scan(
    odom: *mut VmOdometry,
    t: f64,
    xyz: *const f64,
    n: usize,
    pose_out: *mut VmPose,
) -> VmStatus {
    let Some(handle) = (unsafe { odom.as_mut() }) else { return VmStatus::NullArgument };
    if n > 0 && xyz.is_null() {
        return VmStatus::NullArgument;
    }
    guarded(|| {
        let xyz = unsafe { std::slice::from_raw_parts(xyz, 3 * n) };
        let noise = LidarNoiseSpec::new(handle.cfg.sensor.sigma_range, handle.cfg.sensor.sigma_bearing);

        if !handle.started {
            handle.started = true;
            handle.state.t = handle.imu.first().map(|s| s.t.min(t)).unwrap_or(t).min(t);
        }
        if handle.cfg.mode == Mode::LidarInertial && !handle.gravity_initialized {
            let t0 = handle.imu.first().map(|s| s.t).unwrap_or(t);
            let window: Vec<ImuSample> = handle
                .imu
                .iter()
                .copied()
                .take_while(|s| s.t <= t0 + handle.cfg.init.gravity_align_secs)
                .collect();
            if !window.is_empty() {
                init_from_stationary_imu(&mut handle.state, &window);
                handle.gravity_initialized = true;
            }
        }

        let prior = match handle.cfg.mode {
            Mode::LidarInertial => {
                let upto = handle.imu.partition_point(|s| s.t <= t);
                let window: Vec<ImuSample> = handle
                    .imu
                    .drain(..upto)
                    .filter(|s| s.t > handle.state.t)
                    .collect();
                match imu_propagate(&handle.state, &window, &handle.cfg.imu_noise) {
                    Ok(s) => s,
                    Err(_) => return VmStatus::Numerical,
                }
            }
            Mode::LidarOnly => cv_propagate(&handle.state, t, &handle.cfg.cv_noise),
        };

        let points: Vec<CovPoint> = (0..n)
            .filter_map(|i| {
                let p = Vec3::new(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
                let dec = decompose(&p).ok()?;
                if dec.depth < handle.cfg.sensor.min_range || dec.depth > handle.cfg.sensor.max_range
                {
                    return None;
                }
                Some(CovPoint::new(p, point_cov_sensor(&dec, &noise), Frame::Sensor))
            })
            .collect();
        let matches = associate(&handle.map, &points, &prior, &handle.cfg.association);
        let (posterior, diag) = iekf_update(&prior, &matches, &handle.cfg.update);
        if diag.aborted {
            return VmStatus::Numerical;
        }
        let pose = posterior.pose();
        let pu = posterior.pose_uncertainty();
        let world: Vec<CovPoint> = points.iter().map(|p| point_cov_world(p, &pose, &pu)).collect();
        let converged = handle.map.insert_scan(&world);
        if handle.cfg.merging && !converged.is_empty() {
            handle.map.merge_converged(&converged, &handle.cfg.merge);
        }
        let mut state = posterior;
        state.t = t;
        handle.state = state;

        if let Some(out) = unsafe { pose_out.as_mut() } {
            let q = quaternion_from_rotation(&pose.rot);
            *out = VmPose {
                t,
                translation: [pose.trans.x, pose.trans.y, pose.trans.z],
                quaternion: [q.i, q.j, q.k, q.w],
            };
        }
        VmStatus::Ok
    })
}

/// Current pose estimate without processing anything.
///
/// # Safety
/// `odom` must be null or a live handle; `pose_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn vm_odometry_pose(odom: *const VmOdometry, pose_out: *mut VmPose) -> VmStatus {
    let Some(handle) = (unsafe { odom.as_ref() }) else { return VmStatus::NullArgument };
    let Some(out) = (unsafe { pose_out.as_mut() }) else { return VmStatus::NullArgument };
    let q = quaternion_from_rotation(&handle.state.rot);
    *out = VmPose {
        t: handle.state.t,
        translation: [handle.state.trans.x, handle.state.trans.y, handle.state.trans.z],
        quaternion: [q.i, q.j, q.k, q.w],
    };
    VmStatus::Ok
}

/// Map statistics of the odometry session's internal map.
///
/// # Safety
/// `odom` must be null or a live handle; `stats_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn vm_odometry_map_stats(
    odom: *const VmOdometry,
    stats_out: *mut VmMapStats,
) -> VmStatus {
    let Some(handle) = (unsafe { odom.as_ref() }) else { return VmStatus::NullArgument };
    let Some(out) = (unsafe { stats_out.as_mut() }) else { return VmStatus::NullArgument };
    let s = handle.map.stats();
    *out = VmMapStats {
        accumulating: s.accumulating as u64,
        converged_roots: s.converged_roots as u64,
        merged: s.merged as u64,
        non_planar: s.non_planar as u64,
        plane_param_bytes: s.plane_param_bytes as u64,
        retained_point_bytes: s.retained_point_bytes as u64,
    };
    VmStatus::Ok
}
