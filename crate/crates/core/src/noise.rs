//! LiDAR per-point measurement noise in the sensor frame and its
//! propagation to the world frame.
//!
//! A raw return is modeled as a range measurement `d` along a unit bearing
//! `omega`, with independent range noise (std `sigma_range`, meters) and
//! isotropic bearing noise (std `sigma_bearing`, radians, on the 2D tangent
//! plane of the bearing). The sensor-frame covariance is
//!
//! ```text
//! Sigma_p = A diag(sr^2, sb^2, sb^2) A^T,   A = [omega  -d*skew(omega)*N(omega)]
//! ```
//!
//! where `N(omega)` is an orthonormal basis of the tangent plane.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{skew, symmetrize, CovPoint, Frame, Mat3, RigidTransform, Vec3};

/// Range/bearing noise standard deviations of a LiDAR sensor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LidarNoiseSpec {
    /// Range std, meters.
    pub sigma_range: f64,
    /// Bearing std, radians, applied isotropically on the bearing tangent.
    pub sigma_bearing: f64,
}

impl LidarNoiseSpec {
    pub fn new(sigma_range: f64, sigma_bearing: f64) -> Self {
        Self { sigma_range, sigma_bearing }
    }

    pub fn noiseless() -> Self {
        Self { sigma_range: 0.0, sigma_bearing: 0.0 }
    }
}

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("point too close to the sensor (norm {0:.3e} m)")]
    TooClose(f64),
}

/// A sensor-frame point split into bearing direction, depth and a
/// deterministic orthonormal tangent basis.
#[derive(Debug, Clone, Copy)]
pub struct BearingDecomposition {
    pub omega: Vec3,
    pub depth: f64,
    /// 3x2 matrix with orthonormal columns perpendicular to `omega`.
    pub basis: nalgebra::Matrix3x2<f64>,
}

/// Deterministic tangent basis: take the canonical axis least aligned with
/// `omega`, Gram-Schmidt it, complete with the cross product.
pub fn tangent_basis(omega: &Vec3) -> nalgebra::Matrix3x2<f64> {
    let abs = omega.abs();
    let mut k = 0;
    if abs[1] < abs[k] {
        k = 1;
    }
    if abs[2] < abs[k] {
        k = 2;
    }
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    let b1 = (e - omega * omega[k]).normalize();
    let b2 = omega.cross(&b1);
    nalgebra::Matrix3x2::from_columns(&[b1, b2])
}

/// Split a sensor-frame point into `depth * omega` with a tangent basis.
pub fn decompose(p_sensor: &Vec3) -> Result<BearingDecomposition, NoiseError> {
    let depth = p_sensor.norm();
    if depth <= 1e-6 {
        return Err(NoiseError::TooClose(depth));
    }
    let omega = p_sensor / depth;
    Ok(BearingDecomposition { omega, depth, basis: tangent_basis(&omega) })
}

/// Sensor-frame point covariance from range/bearing noise.
pub fn point_cov_sensor(dec: &BearingDecomposition, noise: &LidarNoiseSpec) -> Mat3 {
    let tangent = -dec.depth * skew(&dec.omega) * dec.basis;
    let range_part = dec.omega * dec.omega.transpose() * noise.sigma_range.powi(2);
    let bearing_part = tangent * tangent.transpose() * noise.sigma_bearing.powi(2);
    symmetrize(&(range_part + bearing_part))
}

/// Pose uncertainty blocks used when pushing points into the world frame.
/// Taken from the odometry posterior covariance.
#[derive(Debug, Clone, Copy)]
pub struct PoseUncertainty {
    /// Covariance of the rotation error (body-frame axis-angle), rad^2.
    pub cov_rot: Mat3,
    /// Covariance of the translation, m^2.
    pub cov_trans: Mat3,
}

impl PoseUncertainty {
    pub fn zero() -> Self {
        Self { cov_rot: Mat3::zeros(), cov_trans: Mat3::zeros() }
    }
}

/// Transform a sensor-frame point (with covariance) into the world frame,
/// folding in the pose uncertainty:
///
/// ```text
/// Sigma_w = R (Sigma_p + skew(p) Sigma_R skew(p)^T) R^T + Sigma_t
/// ```
pub fn point_cov_world(p: &CovPoint, tf: &RigidTransform, pu: &PoseUncertainty) -> CovPoint {
    debug_assert_eq!(p.frame, Frame::Sensor);
    let px = skew(&p.pos);
    let cov =
        tf.rot * (p.cov + px * pu.cov_rot * px.transpose()) * tf.rot.transpose() + pu.cov_trans;
    CovPoint { pos: tf.transform_point(&p.pos), cov: symmetrize(&cov), frame: Frame::World }
}
