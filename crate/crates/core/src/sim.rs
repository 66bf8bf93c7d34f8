//! Synthetic planar worlds, trajectories, IMU streams and noisy LiDAR
//! scans. Every emitted point carries a ground-truth plane label so map
//! and odometry behavior can be checked against exact scene knowledge.
//!
//! All randomness derives from a single 64-bit seed; identical seeds give
//! bit-identical datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::filter::ImuSample;
use crate::geom::{exp_so3, skew, Mat3, RigidTransform, Vec3};
use crate::noise::{decompose, LidarNoiseSpec};

/// Label value marking clutter points that belong to no plane.
pub const CLUTTER_LABEL: u32 = u32::MAX;

/// A finite rectangular plane patch.
#[derive(Debug, Clone)]
pub struct PlaneSpec {
    pub center: Vec3,
    /// In-plane orthonormal axes.
    pub u: Vec3,
    pub v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
    pub label: u32,
}

impl PlaneSpec {
    pub fn new(center: Vec3, u: Vec3, v: Vec3, half_u: f64, half_v: f64, label: u32) -> Self {
        let u = u.normalize();
        let v = (v - u * u.dot(&v)).normalize();
        Self { center, u, v, half_u, half_v, label }
    }

    pub fn normal(&self) -> Vec3 {
        self.u.cross(&self.v)
    }

    /// Ray-patch intersection; returns the ray parameter when the ray hits
    /// inside the rectangle.
    fn intersect(&self, origin: &Vec3, dir: &Vec3, min_range: f64) -> Option<f64> {
        let n = self.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = n.dot(&(self.center - origin)) / denom;
        if s <= min_range {
            return None;
        }
        let hit = origin + dir * s;
        let rel = hit - self.center;
        if rel.dot(&self.u).abs() <= self.half_u && rel.dot(&self.v).abs() <= self.half_v {
            Some(s)
        } else {
            None
        }
    }
}

/// Gaussian point blob standing in for non-planar clutter (foliage etc.).
#[derive(Debug, Clone)]
pub struct ClutterBlob {
    pub center: Vec3,
    pub sigma: f64,
    /// Points emitted per scan.
    pub points_per_scan: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SceneSpec {
    pub planes: Vec<PlaneSpec>,
    pub clutter: Vec<ClutterBlob>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), String> {
        let mut labels: Vec<u32> = self.planes.iter().map(|p| p.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.planes.len() {
            return Err("plane labels must be unique".into());
        }
        if labels.contains(&CLUTTER_LABEL) {
            return Err("label u32::MAX is reserved for clutter".into());
        }
        Ok(())
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }
}

/// Horizontal rectangle at height `z` spanning `[x0,x1] x [y0,y1]`.
fn horizontal_panel(z: f64, x0: f64, x1: f64, y0: f64, y1: f64, label: u32) -> PlaneSpec {
    PlaneSpec::new(
        Vec3::new(0.5 * (x0 + x1), 0.5 * (y0 + y1), z),
        Vec3::x(),
        Vec3::y(),
        0.5 * (x1 - x0),
        0.5 * (y1 - y0),
        label,
    )
}

/// Vertical rectangle in a plane of constant `x`.
fn x_panel(x: f64, y0: f64, y1: f64, z0: f64, z1: f64, label: u32) -> PlaneSpec {
    PlaneSpec::new(
        Vec3::new(x, 0.5 * (y0 + y1), 0.5 * (z0 + z1)),
        Vec3::y(),
        Vec3::z(),
        0.5 * (y1 - y0),
        0.5 * (z1 - z0),
        label,
    )
}

/// Vertical rectangle in a plane of constant `y`.
fn y_panel(y: f64, x0: f64, x1: f64, z0: f64, z1: f64, label: u32) -> PlaneSpec {
    PlaneSpec::new(
        Vec3::new(0.5 * (x0 + x1), y, 0.5 * (z0 + z1)),
        Vec3::x(),
        Vec3::z(),
        0.5 * (x1 - x0),
        0.5 * (z1 - z0),
        label,
    )
}

// Panel layout note: every surface sits on a mid-voxel plane (k*0.5 +
// 0.25) so sensor noise cannot split a surface across two voxel layers,
// and panel rectangles are inset from their meeting lines so no voxel
// ever collects points from two different planes.
const PANEL_INSET: f64 = 0.26;
/// Height of floor panels above z = 0 in the room scenes.
pub const FLOOR_HEIGHT: f64 = 0.25;

/// A single floor plane covering `nx * ny` voxels of `voxel` meters.
pub fn floor_scene(nx: usize, ny: usize, voxel: f64) -> SceneSpec {
    let eps = 0.01;
    SceneSpec {
        planes: vec![horizontal_panel(
            0.0,
            eps,
            nx as f64 * voxel - eps,
            eps,
            ny as f64 * voxel - eps,
            0,
        )],
        clutter: Vec::new(),
    }
}

/// Closed box room: floor at [`FLOOR_HEIGHT`], ceiling `height` above it
/// and four walls. `half_x`/`half_y` should land on mid-voxel planes
/// (k*0.5 + 0.25) for clean voxel ownership.
pub fn box_scene(half_x: f64, half_y: f64, height: f64) -> SceneSpec {
    let ix = PANEL_INSET;
    let (z0, z1) = (FLOOR_HEIGHT, FLOOR_HEIGHT + height);
    let eps = 0.01;
    SceneSpec {
        planes: vec![
            horizontal_panel(z0, -half_x + ix, half_x - ix, -half_y + ix, half_y - ix, 0),
            horizontal_panel(z1, -half_x + ix, half_x - ix, -half_y + ix, half_y - ix, 1),
            x_panel(half_x, -half_y + ix, half_y - ix, z0 + eps, z1 - eps, 2),
            x_panel(-half_x, -half_y + ix, half_y - ix, z0 + eps, z1 - eps, 3),
            y_panel(half_y, -half_x + ix, half_x - ix, z0 + eps, z1 - eps, 4),
            y_panel(-half_y, -half_x + ix, half_x - ix, z0 + eps, z1 - eps, 5),
        ],
        clutter: Vec::new(),
    }
}

/// Long corridor along +x: floor at [`FLOOR_HEIGHT`], ceiling `height`
/// above it and two side walls, optionally capped at both ends.
/// `half_width` should land on a mid-voxel plane.
pub fn corridor_scene(length: f64, half_width: f64, height: f64, capped: bool) -> SceneSpec {
    let ix = PANEL_INSET;
    let (z0, z1) = (FLOOR_HEIGHT, FLOOR_HEIGHT + height);
    let eps = 0.01;
    let mut planes = vec![
        horizontal_panel(z0, eps, length - eps, -half_width + ix, half_width - ix, 0),
        horizontal_panel(z1, eps, length - eps, -half_width + ix, half_width - ix, 1),
        y_panel(half_width, eps, length - eps, z0 + eps, z1 - eps, 2),
        y_panel(-half_width, eps, length - eps, z0 + eps, z1 - eps, 3),
    ];
    if capped {
        planes.push(x_panel(-0.25, -half_width + ix, half_width - ix, z0 + eps, z1 - eps, 4));
        planes.push(x_panel(
            length + 0.25,
            -half_width + ix,
            half_width - ix,
            z0 + eps,
            z1 - eps,
            5,
        ));
    }
    SceneSpec { planes, clutter: Vec::new() }
}

/// LiDAR ray pattern in the sensor frame. The azimuth offset advances by
/// the golden ratio each scan so successive scans interleave.
#[derive(Debug, Clone)]
pub enum RayPattern {
    /// Multi-ring spinning unit: `rings` elevation lines, `azimuths` shots
    /// per ring, elevations in radians spanning `[elev_min, elev_max]`.
    Spinning { rings: usize, azimuths: usize, elev_min: f64, elev_max: f64 },
    /// Golden-angle rosette covering the same elevation band, mimicking
    /// non-repetitive solid-state scan patterns.
    Rosette { rays: usize, elev_min: f64, elev_max: f64 },
}

const GOLDEN_RATIO_FRAC: f64 = 0.618_033_988_749_895;

impl RayPattern {
    pub fn rays_per_scan(&self) -> usize {
        match self {
            RayPattern::Spinning { rings, azimuths, .. } => rings * azimuths,
            RayPattern::Rosette { rays, .. } => *rays,
        }
    }

    /// Unit direction vectors for one scan, deterministic in `scan_index`.
    pub fn directions(&self, scan_index: usize) -> Vec<Vec3> {
        let phase = (scan_index as f64 * GOLDEN_RATIO_FRAC).fract();
        match *self {
            RayPattern::Spinning { rings, azimuths, elev_min, elev_max } => {
                let mut out = Vec::with_capacity(rings * azimuths);
                for ring in 0..rings {
                    let f = if rings > 1 { ring as f64 / (rings - 1) as f64 } else { 0.5 };
                    let elev = elev_min + f * (elev_max - elev_min);
                    let (se, ce) = (elev.sin(), elev.cos());
                    for j in 0..azimuths {
                        let az = std::f64::consts::TAU * ((j as f64 + phase) / azimuths as f64);
                        out.push(Vec3::new(ce * az.cos(), ce * az.sin(), se));
                    }
                }
                out
            }
            RayPattern::Rosette { rays, elev_min, elev_max } => {
                let (s0, s1) = (elev_min.sin(), elev_max.sin());
                (0..rays)
                    .map(|i| {
                        let f = (i as f64 + 0.5) / rays as f64;
                        let sz = s0 + f * (s1 - s0);
                        let ce = (1.0 - sz * sz).sqrt();
                        let az = std::f64::consts::TAU
                            * ((i as f64 * GOLDEN_RATIO_FRAC + phase).fract());
                        Vec3::new(ce * az.cos(), ce * az.sin(), sz)
                    })
                    .collect()
            }
        }
    }
}

/// One noiseless ray hit.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    /// Exact point in the sensor frame (`range * direction`).
    pub sensor: Vec3,
    pub world: Vec3,
    pub range: f64,
    pub label: u32,
}

/// Nearest-intersection ray casting over the scene's plane patches.
pub fn cast_rays(
    scene: &SceneSpec,
    pose: &RigidTransform,
    dirs: &[Vec3],
    max_range: f64,
) -> Vec<RayHit> {
    let origin = pose.trans;
    let mut hits = Vec::with_capacity(dirs.len());
    for dir_sensor in dirs {
        let dir = pose.rot * dir_sensor;
        let mut best: Option<(f64, u32)> = None;
        for plane in &scene.planes {
            if let Some(s) = plane.intersect(&origin, &dir, 0.05) {
                if s <= max_range && best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, plane.label));
                }
            }
        }
        if let Some((s, label)) = best {
            hits.push(RayHit {
                sensor: dir_sensor * s,
                world: origin + dir * s,
                range: s,
                label,
            });
        }
    }
    hits
}

/// One simulated LiDAR frame: sensor-frame points with per-point labels,
/// the noise the points were drawn with, and the exact pose they were
/// taken from.
#[derive(Debug, Clone)]
pub struct ScanFrame {
    pub t: f64,
    /// Sensor-frame points.
    pub points: Vec<Vec3>,
    /// Parallel to `points`; [`CLUTTER_LABEL`] for clutter.
    pub labels: Vec<u32>,
    pub noise: LidarNoiseSpec,
    pub gt_pose: Option<RigidTransform>,
}

impl ScanFrame {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Apply the range/bearing noise model to noiseless hits. Range error is
/// drawn along the bearing, bearing error on the two tangent directions;
/// this is the generative counterpart of the analytic covariance.
pub fn perturb(hits: &[RayHit], t: f64, noise: &LidarNoiseSpec, rng: &mut ChaCha8Rng) -> ScanFrame {
    let mut points = Vec::with_capacity(hits.len());
    let mut labels = Vec::with_capacity(hits.len());
    for hit in hits {
        let p = if noise.sigma_range == 0.0 && noise.sigma_bearing == 0.0 {
            hit.sensor
        } else {
            let dec = decompose(&hit.sensor).expect("hit below min range");
            let dd: f64 = noise.sigma_range * sample_normal(rng);
            let th = nalgebra::Vector2::new(
                noise.sigma_bearing * sample_normal(rng),
                noise.sigma_bearing * sample_normal(rng),
            );
            let dir = (dec.omega - skew(&dec.omega) * dec.basis * th).normalize();
            dir * (dec.depth + dd)
        };
        points.push(p);
        labels.push(hit.label);
    }
    ScanFrame { t, points, labels, noise: *noise, gt_pose: None }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sampled trajectory state.
#[derive(Debug, Clone, Copy)]
pub struct TrajSample {
    pub pose: RigidTransform,
    pub vel: Vec3,
    pub acc_world: Vec3,
    /// Body-frame angular rate.
    pub omega_body: Vec3,
}

/// Quintic smoothstep: zero value/velocity/acceleration at both ends.
fn smoothstep5(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    (
        10.0 * t3 - 15.0 * t2 * t2 + 6.0 * t2 * t3,
        30.0 * t2 - 60.0 * t3 + 30.0 * t2 * t2,
        60.0 * t - 180.0 * t2 + 120.0 * t3,
    )
}

/// Ground-truth trajectories with closed-form derivatives. Motions begin
/// after `lead_in` seconds of standstill (used for gravity initialization)
/// and ramp in/out with a quintic phase so acceleration stays continuous.
#[derive(Debug, Clone)]
pub enum TrajectorySpec {
    Stationary {
        pose: RigidTransform,
        duration: f64,
    },
    /// Horizontal circle of `radius` at `height`, one full revolution over
    /// `duration - lead_in`, heading tracking the tangent when
    /// `yaw_follow`.
    Circle {
        radius: f64,
        height: f64,
        lead_in: f64,
        duration: f64,
        yaw_follow: bool,
    },
    /// Straight out-and-back along +x over `length`, returning to the
    /// start: a degenerate-corridor loop.
    BackAndForth {
        length: f64,
        height: f64,
        lead_in: f64,
        duration: f64,
        start: Vec3,
    },
    /// Time-stamped poses interpolated with natural cubic splines
    /// (positions) and piecewise slerp (orientations).
    Waypoints { waypoints: Vec<(f64, RigidTransform)> },
}

impl TrajectorySpec {
    pub fn duration(&self) -> f64 {
        match self {
            TrajectorySpec::Stationary { duration, .. } => *duration,
            TrajectorySpec::Circle { duration, .. } => *duration,
            TrajectorySpec::BackAndForth { duration, .. } => *duration,
            TrajectorySpec::Waypoints { waypoints } => {
                waypoints.last().map(|(t, _)| *t).unwrap_or(0.0)
            }
        }
    }

    pub fn sample(&self, t: f64) -> TrajSample {
        match self {
            TrajectorySpec::Stationary { pose, .. } => TrajSample {
                pose: *pose,
                vel: Vec3::zeros(),
                acc_world: Vec3::zeros(),
                omega_body: Vec3::zeros(),
            },
            TrajectorySpec::Circle { radius, height, lead_in, duration, yaw_follow } => {
                let span = duration - lead_in;
                let tau = (t - lead_in) / span;
                let (q, dq, ddq) = smoothstep5(tau);
                let (phi, dphi, ddphi) = if (0.0..=1.0).contains(&tau) {
                    (
                        std::f64::consts::TAU * q,
                        std::f64::consts::TAU * dq / span,
                        std::f64::consts::TAU * ddq / (span * span),
                    )
                } else {
                    (std::f64::consts::TAU * q, 0.0, 0.0)
                };
                let (s, c) = (phi.sin(), phi.cos());
                let r = *radius;
                let pos = Vec3::new(r * c, r * s, *height);
                let vel = Vec3::new(-r * s, r * c, 0.0) * dphi;
                let acc = Vec3::new(-r * c, -r * s, 0.0) * (dphi * dphi)
                    + Vec3::new(-r * s, r * c, 0.0) * ddphi;
                let (rot, omega) = if *yaw_follow {
                    (exp_so3(&Vec3::new(0.0, 0.0, phi)), Vec3::new(0.0, 0.0, dphi))
                } else {
                    (Mat3::identity(), Vec3::zeros())
                };
                TrajSample {
                    pose: RigidTransform::new(rot, pos),
                    vel,
                    acc_world: acc,
                    omega_body: omega,
                }
            }
            TrajectorySpec::BackAndForth { length, height, lead_in, duration, start } => {
                let span = duration - lead_in;
                let tau = (t - lead_in) / span;
                let (q, dq, ddq) = smoothstep5(tau);
                let (dq, ddq) =
                    if (0.0..=1.0).contains(&tau) { (dq / span, ddq / (span * span)) } else { (0.0, 0.0) };
                let ang = std::f64::consts::TAU * q;
                let s = 0.5 * length * (1.0 - ang.cos());
                let ds = 0.5 * length * ang.sin() * std::f64::consts::TAU * dq;
                let dds = 0.5
                    * length
                    * (ang.cos() * (std::f64::consts::TAU * dq).powi(2)
                        + ang.sin() * std::f64::consts::TAU * ddq);
                TrajSample {
                    pose: RigidTransform::new(
                        Mat3::identity(),
                        start + Vec3::new(s, 0.0, *height),
                    ),
                    vel: Vec3::new(ds, 0.0, 0.0),
                    acc_world: Vec3::new(dds, 0.0, 0.0),
                    omega_body: Vec3::zeros(),
                }
            }
            TrajectorySpec::Waypoints { waypoints } => sample_waypoints(waypoints, t),
        }
    }
}

/// Natural cubic spline through the waypoint positions plus piecewise
/// slerp orientation; angular rate is piecewise constant.
fn sample_waypoints(waypoints: &[(f64, RigidTransform)], t: f64) -> TrajSample {
    assert!(waypoints.len() >= 2, "need at least two waypoints");
    let ts: Vec<f64> = waypoints.iter().map(|(t, _)| *t).collect();
    let t = t.clamp(ts[0], *ts.last().unwrap());
    let seg = match ts.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
        Ok(i) => i.min(ts.len() - 2),
        Err(i) => (i - 1).min(ts.len() - 2),
    };

    let mut pos = Vec3::zeros();
    let mut vel = Vec3::zeros();
    let mut acc = Vec3::zeros();
    for axis in 0..3 {
        let ys: Vec<f64> = waypoints.iter().map(|(_, p)| p.trans[axis]).collect();
        let m = natural_spline_second_derivs(&ts, &ys);
        let h = ts[seg + 1] - ts[seg];
        let a = (ts[seg + 1] - t) / h;
        let b = (t - ts[seg]) / h;
        pos[axis] = a * ys[seg]
            + b * ys[seg + 1]
            + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0;
        vel[axis] = (ys[seg + 1] - ys[seg]) / h
            + ((1.0 - 3.0 * a * a) * m[seg] + (3.0 * b * b - 1.0) * m[seg + 1]) * h / 6.0;
        acc[axis] = a * m[seg] + b * m[seg + 1];
    }

    let (t0, p0) = &waypoints[seg];
    let (t1, p1) = &waypoints[seg + 1];
    let dt = t1 - t0;
    let rel = crate::geom::log_so3(&(p0.rot.transpose() * p1.rot));
    let frac = ((t - t0) / dt).clamp(0.0, 1.0);
    let rot = p0.rot * exp_so3(&(rel * frac));
    TrajSample {
        pose: RigidTransform::new(rot, pos),
        vel,
        acc_world: acc,
        omega_body: rel / dt,
    }
}

/// Second derivatives of a natural cubic spline (tridiagonal solve).
fn natural_spline_second_derivs(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = ts.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = ts[i] - ts[i - 1];
        let h1 = ts[i + 1] - ts[i];
        sub[i] = h0;
        diag[i] = 2.0 * (h0 + h1);
        sup[i] = h1;
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    // forward elimination over the interior rows
    for i in 2..n - 1 {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    for i in (1..n - 1).rev() {
        m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
    }
    m
}

/// IMU generation noise: white noise per sample plus constant biases.
#[derive(Debug, Clone, Copy)]
pub struct ImuGenSpec {
    pub rate: f64,
    pub gyro_std: f64,
    pub accel_std: f64,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
}

impl Default for ImuGenSpec {
    fn default() -> Self {
        Self {
            rate: 200.0,
            gyro_std: 1e-3,
            accel_std: 1e-2,
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
        }
    }
}

/// Ideal IMU from the trajectory derivatives and gravity, plus seeded
/// noise and constant biases.
pub fn gen_imu(
    traj: &TrajectorySpec,
    spec: &ImuGenSpec,
    gravity: &Vec3,
    seed: u64,
) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1b5a_94d3_7e2c_0f11);
    let n = (traj.duration() * spec.rate).round() as usize;
    (1..=n)
        .map(|i| {
            let t = i as f64 / spec.rate;
            let s = traj.sample(t);
            let gyro = s.omega_body
                + spec.gyro_bias
                + Vec3::new(
                    spec.gyro_std * sample_normal(&mut rng),
                    spec.gyro_std * sample_normal(&mut rng),
                    spec.gyro_std * sample_normal(&mut rng),
                );
            let acc = s.pose.rot.transpose() * (s.acc_world - gravity)
                + spec.accel_bias
                + Vec3::new(
                    spec.accel_std * sample_normal(&mut rng),
                    spec.accel_std * sample_normal(&mut rng),
                    spec.accel_std * sample_normal(&mut rng),
                );
            ImuSample { t, gyro, acc }
        })
        .collect()
}

/// Complete synthetic dataset description.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub traj: TrajectorySpec,
    pub pattern: RayPattern,
    pub noise: LidarNoiseSpec,
    pub scan_rate: f64,
    pub max_range: f64,
    pub imu: ImuGenSpec,
    pub seed: u64,
}

impl DatasetSpec {
    /// Number of scans over the trajectory duration.
    pub fn scan_count(&self) -> usize {
        (self.traj.duration() * self.scan_rate).floor() as usize + 1
    }

    /// Generate one scan (index into the scan clock).
    pub fn scan(&self, index: usize) -> ScanFrame {
        let t = index as f64 / self.scan_rate;
        let s = self.traj.sample(t);
        let hits = cast_rays(&self.scene, &s.pose, &self.pattern.directions(index), self.max_range);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut frame = perturb(&hits, t, &self.noise, &mut rng);
        for blob in &self.scene.clutter {
            let inv = s.pose.inverse();
            for _ in 0..blob.points_per_scan {
                let w = blob.center
                    + Vec3::new(
                        blob.sigma * sample_normal(&mut rng),
                        blob.sigma * sample_normal(&mut rng),
                        blob.sigma * sample_normal(&mut rng),
                    );
                let sensor = inv.transform_point(&w);
                if sensor.norm() > 0.1 && sensor.norm() <= self.max_range {
                    frame.points.push(sensor);
                    frame.labels.push(CLUTTER_LABEL);
                }
            }
        }
        frame.gt_pose = Some(s.pose);
        frame
    }

    pub fn scans(&self) -> Vec<ScanFrame> {
        (0..self.scan_count()).map(|i| self.scan(i)).collect()
    }

    pub fn imu_samples(&self, gravity: &Vec3) -> Vec<ImuSample> {
        gen_imu(&self.traj, &self.imu, gravity, self.seed)
    }

    /// Ground-truth poses on the scan clock.
    pub fn gt_trajectory(&self) -> Vec<(f64, RigidTransform)> {
        (0..self.scan_count())
            .map(|i| {
                let t = i as f64 / self.scan_rate;
                (t, self.traj.sample(t).pose)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{imu_propagate, ImuNoise, NavState};

    const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

    #[test]
    fn cast_straight_down_hits_floor() {
        let scene = floor_scene(10, 10, 0.5);
        let pose = RigidTransform::new(Mat3::identity(), Vec3::new(2.0, 2.0, 2.0));
        let hits = cast_rays(&scene, &pose, &[Vec3::new(0.0, 0.0, -1.0)], 100.0);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].world - Vec3::new(2.0, 2.0, 0.0)).amax() < 1e-12);
        assert!((hits[0].range - 2.0).abs() < 1e-12);
        assert_eq!(hits[0].label, 0);
    }

    #[test]
    fn parallel_ray_misses() {
        let scene = floor_scene(10, 10, 0.5);
        let pose = RigidTransform::new(Mat3::identity(), Vec3::new(2.0, 2.0, 2.0));
        let hits = cast_rays(&scene, &pose, &[Vec3::new(1.0, 0.0, 0.0)], 100.0);
        assert!(hits.is_empty());
    }

    #[test]
    fn cast_matches_analytic_intersection() {
        use rand::rngs::StdRng;
        use rand::Rng;
        let mut rng = StdRng::seed_from_u64(3);
        let scene = box_scene(5.25, 5.25, 3.0);
        let pose = RigidTransform::new(
            exp_so3(&Vec3::new(0.1, -0.2, 0.4)),
            Vec3::new(0.5, -1.0, 1.5),
        );
        let dirs: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize()
            })
            .collect();
        let hits = cast_rays(&scene, &pose, &dirs, 100.0);
        assert!(!hits.is_empty());
        for hit in &hits {
            // independent check: the hit lies on its labeled plane and in
            // front of the sensor at the reported range
            let plane = scene.planes.iter().find(|p| p.label == hit.label).unwrap();
            let n = plane.normal();
            assert!((n.dot(&(hit.world - plane.center))).abs() < 1e-9);
            assert!(((hit.world - pose.trans).norm() - hit.range).abs() < 1e-9);
            // sensor-frame point transforms back to the world hit
            assert!((pose.transform_point(&hit.sensor) - hit.world).amax() < 1e-9);
            // nearest: no other plane intersects closer
            let dir = (hit.world - pose.trans) / hit.range;
            for other in &scene.planes {
                if let Some(s) = other.intersect(&pose.trans, &dir, 0.05) {
                    assert!(s >= hit.range - 1e-9);
                }
            }
        }
    }

    #[test]
    fn perturb_zero_noise_is_exact_and_seeded_runs_repeat() {
        let scene = floor_scene(10, 10, 0.5);
        let pose = RigidTransform::new(Mat3::identity(), Vec3::new(2.0, 2.0, 2.0));
        let pattern = RayPattern::Rosette { rays: 200, elev_min: -1.2, elev_max: -0.3 };
        let hits = cast_rays(&scene, &pose, &pattern.directions(0), 100.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clean = perturb(&hits, 0.0, &LidarNoiseSpec::noiseless(), &mut rng);
        for (p, h) in clean.points.iter().zip(&hits) {
            assert_eq!(*p, h.sensor);
        }

        let noise = LidarNoiseSpec::new(0.02, 0.001);
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = perturb(&hits, 0.0, &noise, &mut r1);
        let b = perturb(&hits, 0.0, &noise, &mut r2);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn stationary_imu_is_gravity_only() {
        let traj = TrajectorySpec::Stationary {
            pose: RigidTransform::new(exp_so3(&Vec3::new(0.0, 0.3, 1.0)), Vec3::zeros()),
            duration: 2.0,
        };
        let spec = ImuGenSpec { gyro_std: 0.0, accel_std: 0.0, ..Default::default() };
        let samples = gen_imu(&traj, &spec, &GRAVITY, 1);
        let rot = traj.sample(0.0).pose.rot;
        for s in &samples {
            assert!(s.gyro.amax() < 1e-15);
            assert!((s.acc - (rot.transpose() * -GRAVITY)).amax() < 1e-12);
        }
    }

    #[test]
    fn constant_velocity_leg_has_no_proper_acceleration() {
        let traj = TrajectorySpec::Waypoints {
            waypoints: vec![
                (0.0, RigidTransform::new(Mat3::identity(), Vec3::zeros())),
                (5.0, RigidTransform::new(Mat3::identity(), Vec3::new(5.0, 0.0, 0.0))),
                (10.0, RigidTransform::new(Mat3::identity(), Vec3::new(10.0, 0.0, 0.0))),
            ],
        };
        let spec = ImuGenSpec { gyro_std: 0.0, accel_std: 0.0, ..Default::default() };
        let samples = gen_imu(&traj, &spec, &GRAVITY, 1);
        for s in samples.iter().skip(10).take(samples.len() - 20) {
            assert!(s.gyro.amax() < 1e-12);
            assert!((s.acc - Vec3::new(0.0, 0.0, 9.81)).amax() < 1e-9);
        }
    }

    #[test]
    fn circle_imu_integrates_back_to_ground_truth() {
        let traj = TrajectorySpec::Circle {
            radius: 5.0,
            height: 1.5,
            lead_in: 1.0,
            duration: 21.0,
            yaw_follow: true,
        };
        let spec =
            ImuGenSpec { rate: 400.0, gyro_std: 0.0, accel_std: 0.0, ..Default::default() };
        let samples = gen_imu(&traj, &spec, &GRAVITY, 1);

        let start = traj.sample(0.0);
        let mut state = NavState::new(0.0);
        state.rot = start.pose.rot;
        state.trans = start.pose.trans;
        state.vel = start.vel;
        state.gravity = GRAVITY;
        let out = imu_propagate(&state, &samples, &ImuNoise::default()).unwrap();

        let end = traj.sample(21.0);
        let path_len = std::f64::consts::TAU * 5.0;
        let pos_err = (out.trans - end.pose.trans).norm();
        assert!(
            pos_err < 0.001 * path_len,
            "closed-loop drift {pos_err:.4} m over {path_len:.1} m"
        );
        let rot_err = crate::geom::log_so3(&(end.pose.rot.transpose() * out.rot)).norm();
        assert!(rot_err < 1e-3, "attitude drift {rot_err:.2e} rad");
    }

    #[test]
    fn back_and_forth_returns_to_start() {
        let traj = TrajectorySpec::BackAndForth {
            length: 30.0,
            height: 1.5,
            lead_in: 1.0,
            duration: 31.0,
            start: Vec3::new(1.0, 0.0, 0.0),
        };
        let s0 = traj.sample(0.0);
        let s_end = traj.sample(31.0);
        assert!((s0.pose.trans - s_end.pose.trans).amax() < 1e-9);
        let mid = traj.sample(16.0);
        assert!(mid.pose.trans.x > 25.0);
        // velocity/acceleration vanish at the ends
        assert!(s0.vel.amax() < 1e-12 && s_end.vel.amax() < 1e-9);
        assert!(s0.acc_world.amax() < 1e-12 && s_end.acc_world.amax() < 1e-9);
    }

    #[test]
    fn clutter_blobs_emit_labeled_points() {
        let mut scene = box_scene(4.25, 4.25, 2.5);
        scene.clutter.push(ClutterBlob {
            center: Vec3::new(1.0, 1.0, 1.0),
            sigma: 0.3,
            points_per_scan: 40,
        });
        scene.validate().unwrap();
        let spec = DatasetSpec {
            scene,
            traj: TrajectorySpec::Stationary {
                pose: RigidTransform::new(Mat3::identity(), Vec3::new(0.0, 0.0, 1.2)),
                duration: 1.0,
            },
            pattern: RayPattern::Rosette { rays: 500, elev_min: -1.0, elev_max: 1.0 },
            noise: LidarNoiseSpec::noiseless(),
            scan_rate: 10.0,
            max_range: 60.0,
            imu: ImuGenSpec::default(),
            seed: 3,
        };
        let frame = spec.scan(2);
        let clutter = frame.labels.iter().filter(|&&l| l == CLUTTER_LABEL).count();
        assert_eq!(clutter, 40);
        assert!(frame.labels.iter().any(|&l| l != CLUTTER_LABEL));
        // clutter points scatter around the blob in the sensor frame
        let pose = frame.gt_pose.unwrap();
        for (p, &l) in frame.points.iter().zip(&frame.labels) {
            if l == CLUTTER_LABEL {
                let w = pose.transform_point(p);
                assert!((w - Vec3::new(1.0, 1.0, 1.0)).norm() < 2.0);
            }
        }
    }

    #[test]
    fn dataset_is_deterministic_per_seed() {
        let spec = DatasetSpec {
            scene: box_scene(5.25, 5.25, 3.0),
            traj: TrajectorySpec::Circle {
                radius: 2.0,
                height: 1.5,
                lead_in: 1.0,
                duration: 5.0,
                yaw_follow: false,
            },
            pattern: RayPattern::Spinning {
                rings: 16,
                azimuths: 64,
                elev_min: -0.8,
                elev_max: 0.8,
            },
            noise: LidarNoiseSpec::new(0.02, 0.0005),
            scan_rate: 10.0,
            max_range: 100.0,
            imu: ImuGenSpec::default(),
            seed: 99,
        };
        let a = spec.scan(7);
        let b = spec.scan(7);
        assert_eq!(a.points, b.points);
        assert_eq!(a.labels, b.labels);
        let ia = spec.imu_samples(&GRAVITY);
        let ib = spec.imu_samples(&GRAVITY);
        assert_eq!(ia, ib);
        assert!(!a.is_empty());
    }
}
