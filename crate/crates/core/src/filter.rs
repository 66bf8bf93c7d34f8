//! Iterated error-state Kalman filter over the voxel plane map.
//!
//! The state is (rotation, translation, velocity, gyro bias, accel bias,
//! gravity) with an 18x18 error covariance; the error ordering is
//! `[d_theta, d_t, d_v, d_bg, d_ba, d_g]` with the rotation error as a
//! right-multiplicative body-frame perturbation. Scan registration matches
//! points to union-find root planes and minimizes the point-to-plane MAP
//! objective, re-linearizing the measurement each iteration.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{exp_so3, log_so3, skew, CovPoint, Frame, Mat3, RigidTransform, Vec3};
use crate::map::{VoxelKey, VoxelMap};
use crate::plane::PlaneFit;

pub type Vec18 = SVector<f64, 18>;
pub type Mat18 = SMatrix<f64, 18, 18>;
pub type RowVec18 = SMatrix<f64, 1, 18>;

pub const DIM_THETA: usize = 0;
pub const DIM_TRANS: usize = 3;
pub const DIM_VEL: usize = 6;
pub const DIM_BG: usize = 9;
pub const DIM_BA: usize = 12;
pub const DIM_GRAV: usize = 15;

pub const GRAVITY_NOMINAL: f64 = 9.81;

#[derive(Debug, Error)]
pub enum OdomError {
    #[error("IMU timestamps are not strictly increasing at t={0}")]
    NonMonotonicImu(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Full navigation state with error-state covariance.
#[derive(Debug, Clone)]
pub struct NavState {
    /// Stamp of the estimate, seconds.
    pub t: f64,
    pub rot: Mat3,
    pub trans: Vec3,
    pub vel: Vec3,
    pub bias_gyro: Vec3,
    pub bias_acc: Vec3,
    pub gravity: Vec3,
    pub cov: Mat18,
}

impl NavState {
    pub fn new(t: f64) -> Self {
        Self {
            t,
            rot: Mat3::identity(),
            trans: Vec3::zeros(),
            vel: Vec3::zeros(),
            bias_gyro: Vec3::zeros(),
            bias_acc: Vec3::zeros(),
            gravity: Vec3::new(0.0, 0.0, -GRAVITY_NOMINAL),
            cov: Mat18::identity() * 1e-4,
        }
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.rot, self.trans)
    }

    /// Manifold retraction over all 18 error dimensions.
    pub fn boxplus(&self, delta: &Vec18) -> NavState {
        let dtheta = delta.fixed_rows::<3>(DIM_THETA).into_owned();
        NavState {
            t: self.t,
            rot: self.rot * exp_so3(&dtheta),
            trans: self.trans + delta.fixed_rows::<3>(DIM_TRANS),
            vel: self.vel + delta.fixed_rows::<3>(DIM_VEL),
            bias_gyro: self.bias_gyro + delta.fixed_rows::<3>(DIM_BG),
            bias_acc: self.bias_acc + delta.fixed_rows::<3>(DIM_BA),
            gravity: self.gravity + delta.fixed_rows::<3>(DIM_GRAV),
            cov: self.cov,
        }
    }

    /// Local difference, inverse of [`NavState::boxplus`].
    pub fn boxminus(&self, base: &NavState) -> Vec18 {
        let mut d = Vec18::zeros();
        d.fixed_rows_mut::<3>(DIM_THETA)
            .copy_from(&log_so3(&(base.rot.transpose() * self.rot)));
        d.fixed_rows_mut::<3>(DIM_TRANS).copy_from(&(self.trans - base.trans));
        d.fixed_rows_mut::<3>(DIM_VEL).copy_from(&(self.vel - base.vel));
        d.fixed_rows_mut::<3>(DIM_BG).copy_from(&(self.bias_gyro - base.bias_gyro));
        d.fixed_rows_mut::<3>(DIM_BA).copy_from(&(self.bias_acc - base.bias_acc));
        d.fixed_rows_mut::<3>(DIM_GRAV).copy_from(&(self.gravity - base.gravity));
        d
    }

    /// Pose uncertainty blocks of the posterior, used to propagate map
    /// point covariances.
    pub fn pose_uncertainty(&self) -> crate::noise::PoseUncertainty {
        crate::noise::PoseUncertainty {
            cov_rot: self.cov.fixed_view::<3, 3>(DIM_THETA, DIM_THETA).into_owned(),
            cov_trans: self.cov.fixed_view::<3, 3>(DIM_TRANS, DIM_TRANS).into_owned(),
        }
    }
}

/// One IMU measurement: body angular rate and specific force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub acc: Vec3,
}

/// Process noise of the IMU propagation. Rate noises are per-sample
/// standard deviations; bias random walks are per sqrt-second.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuNoise {
    pub gyro_std: f64,
    pub accel_std: f64,
    pub gyro_bias_rw: f64,
    pub accel_bias_rw: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { gyro_std: 1e-3, accel_std: 1e-2, gyro_bias_rw: 1e-5, accel_bias_rw: 1e-4 }
    }
}

/// Strapdown mean propagation plus first-order covariance propagation.
pub fn imu_propagate(
    state: &NavState,
    samples: &[ImuSample],
    noise: &ImuNoise,
) -> Result<NavState, OdomError> {
    let mut out = state.clone();
    let mut t_prev = state.t;
    for s in samples {
        let dt = s.t - t_prev;
        if dt <= 0.0 {
            return Err(OdomError::NonMonotonicImu(s.t));
        }
        let omega = s.gyro - out.bias_gyro;
        let acc_world = out.rot * (s.acc - out.bias_acc) + out.gravity;

        // error-state transition
        let mut f = Mat18::identity();
        f.fixed_view_mut::<3, 3>(DIM_THETA, DIM_THETA).copy_from(&exp_so3(&(-omega * dt)));
        f.fixed_view_mut::<3, 3>(DIM_THETA, DIM_BG).copy_from(&(-Mat3::identity() * dt));
        f.fixed_view_mut::<3, 3>(DIM_TRANS, DIM_VEL).copy_from(&(Mat3::identity() * dt));
        f.fixed_view_mut::<3, 3>(DIM_VEL, DIM_THETA)
            .copy_from(&(-out.rot * skew(&(s.acc - out.bias_acc)) * dt));
        f.fixed_view_mut::<3, 3>(DIM_VEL, DIM_BA).copy_from(&(-out.rot * dt));
        f.fixed_view_mut::<3, 3>(DIM_VEL, DIM_GRAV).copy_from(&(Mat3::identity() * dt));

        let mut q = Mat18::zeros();
        let qt = (noise.gyro_std * dt).powi(2);
        let qv = (noise.accel_std * dt).powi(2);
        let qbg = noise.gyro_bias_rw.powi(2) * dt;
        let qba = noise.accel_bias_rw.powi(2) * dt;
        for i in 0..3 {
            q[(DIM_THETA + i, DIM_THETA + i)] = qt;
            q[(DIM_VEL + i, DIM_VEL + i)] = qv;
            q[(DIM_BG + i, DIM_BG + i)] = qbg;
            q[(DIM_BA + i, DIM_BA + i)] = qba;
        }
        out.cov = f * out.cov * f.transpose() + q;
        out.cov = (out.cov + out.cov.transpose()) * 0.5;

        // mean
        out.trans += out.vel * dt + acc_world * (0.5 * dt * dt);
        out.vel += acc_world * dt;
        out.rot *= exp_so3(&(omega * dt));
        out.t = s.t;
        t_prev = s.t;
    }
    if !out.trans.iter().all(|v| v.is_finite()) || !out.rot.iter().all(|v| v.is_finite()) {
        return Err(OdomError::NonFinite("imu propagation"));
    }
    Ok(out)
}

/// Process noise of the constant-velocity prior used in LiDAR-only mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstVelNoise {
    /// Attitude random walk, rad/s.
    pub gyro_std: f64,
    /// Acceleration magnitude bound, m/s^2.
    pub accel_std: f64,
}

impl Default for ConstVelNoise {
    fn default() -> Self {
        Self { gyro_std: 0.05, accel_std: 0.3 }
    }
}

/// Constant-velocity propagation: translation advances with the current
/// velocity, rotation is held, uncertainty grows with the configured
/// angular/acceleration bounds.
pub fn cv_propagate(state: &NavState, t_target: f64, noise: &ConstVelNoise) -> NavState {
    let dt = (t_target - state.t).max(0.0);
    let mut out = state.clone();
    out.trans += out.vel * dt;
    out.t = t_target;

    let mut f = Mat18::identity();
    f.fixed_view_mut::<3, 3>(DIM_TRANS, DIM_VEL).copy_from(&(Mat3::identity() * dt));
    let mut q = Mat18::zeros();
    for i in 0..3 {
        q[(DIM_THETA + i, DIM_THETA + i)] = (noise.gyro_std * dt).powi(2);
        q[(DIM_VEL + i, DIM_VEL + i)] = (noise.accel_std * dt).powi(2);
    }
    out.cov = f * out.cov * f.transpose() + q;
    out.cov = (out.cov + out.cov.transpose()) * 0.5;
    out
}

/// Gravity and gyro-bias initialization from a stationary IMU window:
/// gravity is the negated mean specific force (rotated by the initial
/// attitude), the gyro bias the mean angular rate.
pub fn init_from_stationary_imu(state: &mut NavState, samples: &[ImuSample]) {
    if samples.is_empty() {
        return;
    }
    let n = samples.len() as f64;
    let acc_mean = samples.iter().map(|s| s.acc).sum::<Vec3>() / n;
    let gyro_mean = samples.iter().map(|s| s.gyro).sum::<Vec3>() / n;
    state.gravity = -(state.rot * acc_mean);
    state.bias_gyro = gyro_mean;
}

/// A gated point-to-plane correspondence: the raw sensor-frame point with
/// its covariance and the union-find root plane it registered to.
#[derive(Debug, Clone)]
pub struct PlaneMatch {
    pub point: CovPoint,
    pub plane: PlaneFit,
    pub root: VoxelKey,
}

impl PlaneMatch {
    /// Unnormalized plane normal `[a, b, 1]` mapped to world axes.
    pub fn world_normal(&self) -> Vec3 {
        self.plane.world_normal()
    }
}

/// Signed point-to-plane distance of the match under `state`, meters.
pub fn residual(state: &NavState, m: &PlaneMatch) -> f64 {
    let world = state.rot * m.point.pos + state.trans;
    m.plane.signed_distance(&world)
}

/// Measurement Jacobian of [`residual`] w.r.t. the error state at zero.
/// Only the attitude and translation blocks are populated.
pub fn measurement_jacobian(state: &NavState, m: &PlaneMatch) -> RowVec18 {
    let normal = m.world_normal();
    let inv_norm = 1.0 / normal.norm();
    let mut h = RowVec18::zeros();
    let d_theta = -(normal.transpose() * state.rot * skew(&m.point.pos)) * inv_norm;
    h.fixed_view_mut::<1, 3>(0, DIM_THETA).copy_from(&d_theta);
    h.fixed_view_mut::<1, 3>(0, DIM_TRANS).copy_from(&(normal.transpose() * inv_norm));
    h
}

/// Observation noise of one match: the residual variance contributed by
/// the plane parameter covariance and the sensor-frame point covariance,
/// floored at 1e-12.
pub fn residual_noise(state: &NavState, m: &PlaneMatch) -> f64 {
    let normal = m.world_normal();
    let norm = normal.norm();
    let inv_norm = 1.0 / norm;

    // point part: d h / d p_sensor = normal^T R / |normal|
    let j_p = (normal.transpose() * state.rot) * inv_norm;
    let point_var = (j_p * m.point.cov * j_p.transpose())[0];

    // plane part: gradient of h w.r.t. n = [a, b, d] at the permuted
    // world coordinates of the point
    let world = state.rot * m.point.pos + state.trans;
    let q = m.plane.axis.permute(&world);
    let h = residual(state, m);
    let (a, b) = (m.plane.n.x, m.plane.n.y);
    let j_n = Vec3::new(
        (q.x - a * h * inv_norm) * inv_norm,
        (q.y - b * h * inv_norm) * inv_norm,
        inv_norm,
    );
    let plane_var = (j_n.transpose() * m.plane.cov * j_n)[0];

    (point_var + plane_var).max(1e-12)
}

/// Association settings: residual gate in sigmas.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationConfig {
    pub gate_sigma: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self { gate_sigma: 3.0 }
    }
}

/// Match scan points against the map: transform by the current state, look
/// up the containing voxel's root plane, and keep matches whose normalized
/// residual `h^2 / (H P H^T + R)` passes the gate.
pub fn associate(
    map: &VoxelMap,
    points: &[CovPoint],
    state: &NavState,
    cfg: &AssociationConfig,
) -> Vec<PlaneMatch> {
    let gate2 = cfg.gate_sigma * cfg.gate_sigma;
    let mut matches = Vec::new();
    for p in points {
        debug_assert_eq!(p.frame, Frame::Sensor);
        let world = state.rot * p.pos + state.trans;
        let Some((plane, root)) = map.query_plane(&world) else { continue };
        let m = PlaneMatch { point: *p, plane: *plane, root };
        let h = residual(state, &m);
        let jac = measurement_jacobian(state, &m);
        let r = residual_noise(state, &m);
        let s = (jac * state.cov * jac.transpose())[0] + r;
        if h * h <= gate2 * s {
            matches.push(m);
        }
    }
    matches
}

/// IESKF iteration settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    pub max_iters: usize,
    /// Convergence threshold on the step norm.
    pub tol: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self { max_iters: 5, tol: 1e-6 }
    }
}

/// Per-scan update diagnostics, serialized into the run log.
#[derive(Debug, Clone, Default, Serialize)]
pub struct UpdateDiag {
    pub iterations: usize,
    pub matches: usize,
    pub cost_initial: f64,
    pub cost_final: f64,
    /// Objective value after each accepted iterate.
    pub cost_trace: Vec<f64>,
    /// Non-finite residuals force the update to return the prior.
    pub aborted: bool,
}

/// The MAP objective: prior Mahalanobis term plus the weighted sum of
/// squared point-to-plane residuals.
pub fn map_objective(
    state: &NavState,
    prior: &NavState,
    prior_info: &Mat18,
    matches: &[PlaneMatch],
    noise: &[f64],
) -> f64 {
    let delta = state.boxminus(prior);
    let mut cost = (delta.transpose() * prior_info * delta)[0];
    for (m, r) in matches.iter().zip(noise) {
        let h = residual(state, m);
        cost += h * h / r;
    }
    cost
}

/// Iterated extended Kalman update: Gauss-Newton on the MAP objective with
/// re-linearization and a backtracking step, posterior covariance from the
/// final information matrix. With no matches the prior is returned
/// unchanged.
pub fn iekf_update(
    prior: &NavState,
    matches: &[PlaneMatch],
    cfg: &UpdateConfig,
) -> (NavState, UpdateDiag) {
    let mut diag = UpdateDiag { matches: matches.len(), ..Default::default() };
    if matches.is_empty() {
        return (prior.clone(), diag);
    }

    let prior_info = match nalgebra::Cholesky::new(prior.cov) {
        Some(chol) => chol.inverse(),
        None => {
            let bumped = prior.cov + Mat18::identity() * 1e-12;
            match nalgebra::Cholesky::new(bumped) {
                Some(chol) => chol.inverse(),
                None => {
                    diag.aborted = true;
                    return (prior.clone(), diag);
                }
            }
        }
    };

    // observation noises frozen at the association state
    let noise: Vec<f64> = matches.iter().map(|m| residual_noise(prior, m)).collect();
    if noise.iter().any(|r| !r.is_finite()) {
        diag.aborted = true;
        return (prior.clone(), diag);
    }

    let mut state = prior.clone();
    let mut cost = map_objective(&state, prior, &prior_info, matches, &noise);
    diag.cost_initial = cost;
    let mut info = prior_info;

    for _ in 0..cfg.max_iters {
        let delta_hat = state.boxminus(prior);
        let mut m_mat = prior_info;
        let mut rhs = -(prior_info * delta_hat);
        let mut finite = true;
        for (m, r) in matches.iter().zip(&noise) {
            let h = residual(&state, m);
            if !h.is_finite() {
                finite = false;
                break;
            }
            let jac = measurement_jacobian(&state, m);
            m_mat += jac.transpose() * jac / *r;
            rhs -= jac.transpose() * (h / r);
        }
        if !finite {
            diag.aborted = true;
            return (prior.clone(), diag);
        }

        let Some(chol) = nalgebra::Cholesky::new(m_mat) else {
            diag.aborted = true;
            return (prior.clone(), diag);
        };
        info = m_mat;
        let step = chol.solve(&rhs);

        // backtracking keeps the objective non-increasing
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 64.0 {
            let candidate = state.boxplus(&(step * alpha));
            let c = map_objective(&candidate, prior, &prior_info, matches, &noise);
            if c <= cost {
                state = candidate;
                cost = c;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        diag.iterations += 1;
        diag.cost_trace.push(cost);
        if !accepted || (step * alpha).norm() < cfg.tol {
            break;
        }
    }

    diag.cost_final = cost;
    match nalgebra::Cholesky::new(info) {
        Some(chol) => {
            let cov = chol.inverse();
            state.cov = (cov + cov.transpose()) * 0.5;
        }
        None => {
            diag.aborted = true;
            return (prior.clone(), diag);
        }
    }
    (state, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::MainAxis;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn hover_samples(state: &NavState, rate: f64, secs: f64) -> Vec<ImuSample> {
        let n = (secs * rate) as usize;
        (1..=n)
            .map(|i| ImuSample {
                t: state.t + i as f64 / rate,
                gyro: Vec3::zeros(),
                acc: -(state.rot.transpose() * state.gravity),
            })
            .collect()
    }

    #[test]
    fn hover_leaves_pose_unchanged() {
        let state = NavState::new(0.0);
        let samples = hover_samples(&state, 200.0, 1.0);
        let out = imu_propagate(&state, &samples, &ImuNoise::default()).unwrap();
        assert!((out.trans - state.trans).amax() < 1e-12);
        assert!((out.vel - state.vel).amax() < 1e-12);
        assert!((out.rot - state.rot).amax() < 1e-12);
        assert!((out.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_acceleration_double_integrates() {
        let mut state = NavState::new(0.0);
        state.cov = Mat18::identity() * 1e-6;
        let a_world = Vec3::new(0.4, 0.0, 0.0);
        let rate = 1000.0;
        let samples: Vec<ImuSample> = (1..=1000)
            .map(|i| ImuSample {
                t: i as f64 / rate,
                gyro: Vec3::zeros(),
                acc: state.rot.transpose() * (a_world - state.gravity),
            })
            .collect();
        let out = imu_propagate(&state, &samples, &ImuNoise::default()).unwrap();
        assert!((out.vel - a_world).amax() < 1e-3);
        assert!((out.trans - a_world * 0.5).amax() < 1e-3);
    }

    #[test]
    fn covariance_trace_grows_with_process_noise() {
        let state = NavState::new(0.0);
        let samples = hover_samples(&state, 200.0, 0.5);
        let out = imu_propagate(&state, &samples, &ImuNoise::default()).unwrap();
        assert!(out.cov.trace() > state.cov.trace());
    }

    #[test]
    fn non_monotonic_imu_rejected() {
        let state = NavState::new(0.0);
        let mut samples = hover_samples(&state, 100.0, 0.1);
        samples.push(samples[2]);
        assert!(matches!(
            imu_propagate(&state, &samples, &ImuNoise::default()),
            Err(OdomError::NonMonotonicImu(_))
        ));
    }

    fn z_plane_match(point: Vec3, plane_cov: Mat3, point_cov: Mat3) -> PlaneMatch {
        PlaneMatch {
            point: CovPoint::new(point, point_cov, Frame::Sensor),
            plane: PlaneFit { n: Vec3::zeros(), axis: MainAxis::Z, cov: plane_cov, n_points: 50 },
            root: VoxelKey::new(0, 0, 0),
        }
    }

    #[test]
    fn residual_direct_substitution() {
        let state = NavState::new(0.0);
        let m = z_plane_match(Vec3::new(1.0, 2.0, 3.0), Mat3::zeros(), Mat3::zeros());
        assert!((residual(&state, &m) - 3.0).abs() < 1e-15);
        let on_plane = z_plane_match(Vec3::new(-0.4, 0.9, 0.0), Mat3::zeros(), Mat3::zeros());
        assert_eq!(residual(&state, &on_plane), 0.0);
    }

    #[test]
    fn residual_matches_projection_oracle() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..200 {
            let state = NavState::new(0.0).boxplus(&Vec18::from_fn(|i, _| {
                if i < 6 {
                    rng.random_range(-0.8..0.8)
                } else {
                    0.0
                }
            }));
            let axis = match rng.random_range(0..3) {
                0 => MainAxis::X,
                1 => MainAxis::Y,
                _ => MainAxis::Z,
            };
            let n = Vec3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-2.0..2.0),
            );
            let m = PlaneMatch {
                point: CovPoint::exact(
                    Vec3::new(rng.random(), rng.random(), rng.random()),
                    Frame::Sensor,
                ),
                plane: PlaneFit { n, axis, cov: Mat3::zeros(), n_points: 50 },
                root: VoxelKey::new(0, 0, 0),
            };
            let h = residual(&state, &m);
            // oracle: normalize the full world normal, signed distance
            let world = state.rot * m.point.pos + state.trans;
            let normal = m.world_normal();
            let oracle = (normal.dot(&world) + n.z) / normal.norm();
            assert!((h - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_noise_point_only() {
        let state = NavState::new(0.0);
        let sigma2 = 0.004;
        let m =
            z_plane_match(Vec3::new(0.7, -0.3, 0.2), Mat3::zeros(), Mat3::identity() * sigma2);
        assert!((residual_noise(&state, &m) - sigma2).abs() < 1e-15);
    }

    #[test]
    fn residual_noise_plane_only() {
        let state = NavState::new(0.0);
        let plane_cov = Mat3::new(
            2e-4, 1e-5, 0.0, //
            1e-5, 3e-4, 2e-5, //
            0.0, 2e-5, 4e-4,
        );
        let m = z_plane_match(Vec3::new(1.0, 2.0, 0.0), plane_cov, Mat3::zeros());
        // h = 0 at the point, J_n = [1, 2, 1]
        let j = Vec3::new(1.0, 2.0, 1.0);
        let expect = (j.transpose() * plane_cov * j)[0];
        assert!((residual_noise(&state, &m) - expect).abs() < 1e-12);
    }

    #[test]
    fn residual_noise_matches_finite_difference_propagation() {
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..50 {
            let state = NavState::new(0.0).boxplus(&Vec18::from_fn(|i, _| {
                if i < 6 {
                    rng.random_range(-0.5..0.5)
                } else {
                    0.0
                }
            }));
            let n = Vec3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-1.0..1.0),
            );
            let point = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let plane_cov = {
                let a = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 1e-2;
                a * a.transpose()
            };
            let point_cov = {
                let a = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 1e-2;
                a * a.transpose()
            };
            let m = PlaneMatch {
                point: CovPoint::new(point, point_cov, Frame::Sensor),
                plane: PlaneFit { n, axis: MainAxis::Z, cov: plane_cov, n_points: 50 },
                root: VoxelKey::new(0, 0, 0),
            };
            let analytic = residual_noise(&state, &m);

            // finite-difference gradients of h through (n, p)
            let h = 1e-6;
            let mut grad_n = Vec3::zeros();
            for i in 0..3 {
                let mut mp = m.clone();
                mp.plane.n[i] += h;
                let mut mm = m.clone();
                mm.plane.n[i] -= h;
                grad_n[i] = (residual(&state, &mp) - residual(&state, &mm)) / (2.0 * h);
            }
            let mut grad_p = Vec3::zeros();
            for i in 0..3 {
                let mut mp = m.clone();
                mp.point.pos[i] += h;
                let mut mm = m.clone();
                mm.point.pos[i] -= h;
                grad_p[i] = (residual(&state, &mp) - residual(&state, &mm)) / (2.0 * h);
            }
            let fd = (grad_n.transpose() * plane_cov * grad_n)[0]
                + (grad_p.transpose() * point_cov * grad_p)[0];
            assert!(
                (analytic - fd).abs() / fd.max(1e-12) < 1e-3,
                "noise mismatch: analytic {analytic:.6e} fd {fd:.6e}"
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_through_boxplus() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..100 {
            let state = NavState::new(0.0).boxplus(&Vec18::from_fn(|i, _| {
                if i < 6 {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            }));
            let axis = match rng.random_range(0..3) {
                0 => MainAxis::X,
                1 => MainAxis::Y,
                _ => MainAxis::Z,
            };
            let m = PlaneMatch {
                point: CovPoint::exact(
                    Vec3::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                    ),
                    Frame::Sensor,
                ),
                plane: PlaneFit {
                    n: Vec3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-1.0..1.0),
                    ),
                    axis,
                    cov: Mat3::zeros(),
                    n_points: 50,
                },
                root: VoxelKey::new(0, 0, 0),
            };
            let jac = measurement_jacobian(&state, &m);
            let h = 1e-6;
            let mut fd = RowVec18::zeros();
            for i in 0..18 {
                let mut dp = Vec18::zeros();
                dp[i] = h;
                let mut dm = Vec18::zeros();
                dm[i] = -h;
                fd[i] = (residual(&state.boxplus(&dp), &m) - residual(&state.boxplus(&dm), &m))
                    / (2.0 * h);
            }
            let scale = jac.amax().max(1.0);
            assert!(
                (jac - fd).amax() / scale < 1e-5,
                "jacobian mismatch {:.2e}",
                (jac - fd).amax() / scale
            );
        }
    }

    #[test]
    fn empty_matches_returns_prior_bit_exact() {
        let mut prior = NavState::new(4.2);
        prior.trans = Vec3::new(1.0, 2.0, 3.0);
        prior.cov = Mat18::identity() * 0.123;
        let (post, diag) = iekf_update(&prior, &[], &UpdateConfig::default());
        assert_eq!(post.trans, prior.trans);
        assert_eq!(post.rot, prior.rot);
        assert_eq!(post.cov, prior.cov);
        assert_eq!(diag.iterations, 0);
    }

    #[test]
    fn single_match_matches_scalar_kalman() {
        // plane z=0, point straight below the sensor: only the z
        // translation is observed.
        let mut prior = NavState::new(0.0);
        let p_var = 0.04;
        prior.cov = Mat18::identity() * p_var;
        let h0 = 0.15; // residual at the prior
        let point_var = 0.01;
        let m = z_plane_match(
            Vec3::new(0.0, 0.0, h0),
            Mat3::zeros(),
            Mat3::from_diagonal(&Vec3::new(0.0, 0.0, point_var)),
        );
        let (post, diag) = iekf_update(&prior, &[m], &UpdateConfig::default());
        let expect = -p_var * h0 / (p_var + point_var);
        assert!(
            (post.trans.z - expect).abs() < 1e-10,
            "z correction {} vs scalar kalman {}",
            post.trans.z,
            expect
        );
        assert!(diag.cost_final <= diag.cost_initial + 1e-12);
        // posterior variance of the observed dimension per scalar formula
        let post_var = p_var * point_var / (p_var + point_var);
        assert!((post.cov[(DIM_TRANS + 2, DIM_TRANS + 2)] - post_var).abs() < 1e-10);
    }

    #[test]
    fn posterior_covariance_contracts_and_stays_psd() {
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..20 {
            let mut prior = NavState::new(0.0);
            prior.cov = Mat18::identity() * rng.random_range(0.001..0.1);
            let matches: Vec<PlaneMatch> = (0..30)
                .map(|_| {
                    z_plane_match(
                        Vec3::new(
                            rng.random_range(-3.0..3.0),
                            rng.random_range(-3.0..3.0),
                            rng.random_range(-0.05..0.05),
                        ),
                        Mat3::identity() * 1e-6,
                        Mat3::identity() * 1e-4,
                    )
                })
                .collect();
            let (post, diag) = iekf_update(&prior, &matches, &UpdateConfig::default());
            assert!(!diag.aborted);
            assert!(post.cov.trace() <= prior.cov.trace());
            let eig = post.cov.symmetric_eigenvalues();
            assert!(eig.min() > -1e-12);
            assert!(diag.cost_final <= diag.cost_initial + 1e-12);
        }
    }

    #[test]
    fn stationary_init_recovers_gravity_and_gyro_bias() {
        let mut state = NavState::new(0.0);
        let true_gravity = Vec3::new(0.1, -0.2, -9.75);
        let gyro_bias = Vec3::new(0.002, -0.001, 0.0005);
        let samples: Vec<ImuSample> = (0..200)
            .map(|i| ImuSample { t: i as f64 / 200.0, gyro: gyro_bias, acc: -true_gravity })
            .collect();
        init_from_stationary_imu(&mut state, &samples);
        assert!((state.gravity - true_gravity).amax() < 1e-12);
        assert!((state.bias_gyro - gyro_bias).amax() < 1e-12);
        assert!((state.gravity.norm() - GRAVITY_NOMINAL).abs() / GRAVITY_NOMINAL < 0.05);
    }
}
