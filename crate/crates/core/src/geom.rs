//! Geometric primitives shared by the whole crate: SO(3) exp/log maps,
//! rigid transforms, manifold retraction (boxplus/boxminus) and points
//! carrying a positional covariance.
//!
//! Rotations are stored as 3x3 matrices; quaternions are accepted at I/O
//! boundaries and normalized on ingest. Pose deltas are 6-vectors ordered
//! `[d_theta; d_trans]` with the rotation part an axis-angle vector in
//! radians.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;

/// Skew-symmetric matrix such that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Extract the axis-angle vector from a skew-symmetric matrix.
fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula: rotation matrix from an axis-angle vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-8 {
        // sin(t)/t and (1-cos(t))/t^2 by series
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let wx = skew(w);
    Mat3::identity() + wx * a + wx * wx * b
}

/// Inverse of [`exp_so3`]: axis-angle vector of a rotation matrix.
///
/// For rotations of exactly pi the axis sign is ambiguous; one valid axis
/// is returned.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta < 1e-10 {
        return vee(&((r - r.transpose()) * 0.5));
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi: sin(theta) ~ 0, recover the axis from R + I instead.
        let m = (r + Mat3::identity()) * 0.5;
        let diag = Vec3::new(m[(0, 0)], m[(1, 1)], m[(2, 2)]);
        let k = diag.imax();
        let mut axis = Vec3::zeros();
        axis[k] = diag[k].max(0.0).sqrt();
        for j in 0..3 {
            if j != k {
                axis[j] = m[(j, k)] / axis[k];
            }
        }
        axis.normalize_mut();
        // Fix the sign so the result stays consistent with R - R^T where
        // it is still informative.
        let v = vee(&((r - r.transpose()) * 0.5));
        if v.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    vee(&((r - r.transpose()) * (0.5 * theta / theta.sin())))
}

/// Orthonormalize a near-rotation matrix (SVD projection onto SO(3)).
pub fn project_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// True when `m` is orthonormal with determinant +1 within `tol`.
pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    ((m.transpose() * m) - Mat3::identity()).norm() <= tol && (m.determinant() - 1.0).abs() <= tol
}

pub fn rotation_from_quaternion(q: &UnitQuaternion<f64>) -> Mat3 {
    *q.to_rotation_matrix().matrix()
}

pub fn quaternion_from_rotation(r: &Mat3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_matrix(r)
}

/// Rigid transform mapping sensor coordinates into world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rot: Mat3::identity(), trans: Vec3::zeros() }
    }

    pub fn new(rot: Mat3, trans: Vec3) -> Self {
        Self { rot, trans }
    }

    pub fn from_parts(q: &UnitQuaternion<f64>, trans: Vec3) -> Self {
        Self { rot: rotation_from_quaternion(q), trans }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }

    /// `self` applied after `other`: (self * other)(p) = self(other(p)).
    pub fn compose(&self, other: &Self) -> Self {
        Self { rot: self.rot * other.rot, trans: self.rot * other.trans + self.trans }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self { rot: rt, trans: -(rt * self.trans) }
    }

    /// Retraction: right-multiplicative rotation update, additive translation.
    pub fn boxplus(&self, delta: &Vec6) -> Self {
        let dtheta = delta.fixed_rows::<3>(0).into_owned();
        let dtrans = delta.fixed_rows::<3>(3).into_owned();
        Self { rot: self.rot * exp_so3(&dtheta), trans: self.trans + dtrans }
    }

    /// Local difference: `boxminus(boxplus(x, d), x) == d` for small `d`.
    pub fn boxminus(&self, base: &Self) -> Vec6 {
        let dtheta = log_so3(&(base.rot.transpose() * self.rot));
        let dtrans = self.trans - base.trans;
        let mut out = Vec6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&dtheta);
        out.fixed_rows_mut::<3>(3).copy_from(&dtrans);
        out
    }
}

/// Coordinate frame a [`CovPoint`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Sensor,
    World,
}

/// A 3D point with a symmetric PSD positional covariance.
#[derive(Debug, Clone, Copy)]
pub struct CovPoint {
    pub pos: Vec3,
    pub cov: Mat3,
    pub frame: Frame,
}

impl CovPoint {
    pub fn new(pos: Vec3, cov: Mat3, frame: Frame) -> Self {
        Self { pos, cov, frame }
    }

    pub fn exact(pos: Vec3, frame: Frame) -> Self {
        Self { pos, cov: Mat3::zeros(), frame }
    }
}

/// Force exact symmetry on a nearly-symmetric matrix.
pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}
