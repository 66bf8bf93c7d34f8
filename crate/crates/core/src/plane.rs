//! Incremental 3DOF plane fitting with a closed-form least-squares solve
//! and first-order covariance estimation.
//!
//! A plane is parameterized as `a*x + b*y + z + d = 0` after permuting
//! coordinates so the axis of smallest projection variance (the main axis)
//! carries the unit coefficient; the fit state is `n = [a, b, d]`. All
//! quantities needed by the solve are plain sums, so points can be folded
//! in one at a time and the normal equations rebuilt in O(1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{symmetrize, CovPoint, Mat3, Vec3};

/// Coordinate axis normalized to unit coefficient in the plane equation.
///
/// The permuted frame is a cyclic rotation of the world axes, so covariance
/// matrices map across by plain permutation similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MainAxis {
    X,
    Y,
    Z,
}

impl MainAxis {
    /// World -> permuted coordinates. The main axis lands in the third slot.
    pub fn permute(&self, p: &Vec3) -> Vec3 {
        match self {
            MainAxis::Z => *p,
            MainAxis::X => Vec3::new(p.y, p.z, p.x),
            MainAxis::Y => Vec3::new(p.z, p.x, p.y),
        }
    }

    /// Permuted -> world coordinates.
    pub fn unpermute(&self, p: &Vec3) -> Vec3 {
        match self {
            MainAxis::Z => *p,
            MainAxis::X => Vec3::new(p.z, p.x, p.y),
            MainAxis::Y => Vec3::new(p.y, p.z, p.x),
        }
    }

    /// Permutation matrix P with `permute(p) == P * p`.
    pub fn matrix(&self) -> Mat3 {
        match self {
            MainAxis::Z => Mat3::identity(),
            MainAxis::X => Mat3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0),
            MainAxis::Y => Mat3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate fit: points are collinear or coincident in the fit plane")]
    DegenerateFit,
}

/// Running sums of a point set, sufficient for the least-squares solve.
///
/// Sums are kept in world coordinates; the permuted normal equations for
/// any [`MainAxis`] are derived by relabeling, so the axis can be chosen
/// (and re-chosen) after accumulation without touching the points again.
#[derive(Debug, Clone)]
pub struct FitAccumulator {
    count: usize,
    sum: Vec3,
    sum_sq: Mat3,
    axis: MainAxis,
}

impl Default for FitAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl FitAccumulator {
    pub fn new() -> Self {
        Self { count: 0, sum: Vec3::zeros(), sum_sq: Mat3::zeros(), axis: MainAxis::Z }
    }

    pub fn add(&mut self, p: &Vec3) {
        self.count += 1;
        self.sum += p;
        self.sum_sq += p * p.transpose();
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn axis(&self) -> MainAxis {
        self.axis
    }

    pub fn set_axis(&mut self, axis: MainAxis) {
        self.axis = axis;
    }

    pub fn mean(&self) -> Vec3 {
        self.sum / self.count as f64
    }

    /// Per-world-axis variance of the accumulated points.
    pub fn variances(&self) -> Vec3 {
        let n = self.count as f64;
        let m = self.sum / n;
        Vec3::new(
            self.sum_sq[(0, 0)] / n - m.x * m.x,
            self.sum_sq[(1, 1)] / n - m.y * m.y,
            self.sum_sq[(2, 2)] / n - m.z * m.z,
        )
    }

    /// Pick the axis of smallest projection variance and store it.
    /// Ties prefer Z, then Y, then X.
    pub fn choose_axis(&mut self) -> MainAxis {
        let v = self.variances();
        self.axis = if v.z <= v.y && v.z <= v.x {
            MainAxis::Z
        } else if v.y <= v.x {
            MainAxis::Y
        } else {
            MainAxis::X
        };
        self.axis
    }

    /// Centered sample covariance of the points (world coordinates).
    pub fn centered_cov(&self) -> Mat3 {
        let n = self.count as f64;
        let m = self.sum / n;
        symmetrize(&(self.sum_sq / n - m * m.transpose()))
    }

    /// Normal equations `A n = e` in the permuted frame of the stored axis.
    pub fn normal_system(&self) -> (Mat3, Vec3) {
        let p = self.axis.matrix();
        let s = p * self.sum;
        let ss = p * self.sum_sq * p.transpose();
        let n = self.count as f64;
        let a = Mat3::new(
            ss[(0, 0)],
            ss[(0, 1)],
            s.x,
            ss[(0, 1)],
            ss[(1, 1)],
            s.y,
            s.x,
            s.y,
            n,
        );
        let e = Vec3::new(-ss[(0, 2)], -ss[(1, 2)], -s.z);
        (a, e)
    }

    /// Degeneracy test on the centered x'-y' scatter, unit invariant:
    /// the fit is degenerate when `det2 < 1e-9 * spread^2` with
    /// `det2 = cxx*cyy - cxy^2` and `spread = (cxx + cyy)/2`.
    fn is_degenerate(&self) -> bool {
        let p = self.axis.matrix();
        let c = p * self.centered_cov() * p.transpose();
        let det2 = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(0, 1)];
        let spread = 0.5 * (c[(0, 0)] + c[(1, 1)]);
        det2.is_nan() || det2 <= 1e-9 * spread * spread
    }
}

/// Adjugate of a 3x3 matrix (transpose of the cofactor matrix).
fn adjugate(m: &Mat3) -> Mat3 {
    Mat3::new(
        m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)],
        m[(0, 2)] * m[(2, 1)] - m[(0, 1)] * m[(2, 2)],
        m[(0, 1)] * m[(1, 2)] - m[(0, 2)] * m[(1, 1)],
        m[(1, 2)] * m[(2, 0)] - m[(1, 0)] * m[(2, 2)],
        m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)],
        m[(0, 2)] * m[(1, 0)] - m[(0, 0)] * m[(1, 2)],
        m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)],
        m[(0, 1)] * m[(2, 0)] - m[(0, 0)] * m[(2, 1)],
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
    )
}

/// Closed-form least-squares solve `n = adj(A)/det(A) * e`.
pub fn solve_plane(acc: &FitAccumulator) -> Result<Vec3, FitError> {
    if acc.count < 3 {
        return Err(FitError::InsufficientPoints(acc.count));
    }
    if acc.is_degenerate() {
        return Err(FitError::DegenerateFit);
    }
    let (a, e) = acc.normal_system();
    let det = a.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(FitError::DegenerateFit);
    }
    Ok(adjugate(&a) * e / det)
}

/// Converged plane parameters: `n = [a, b, d]` under `axis`, with the
/// first-order parameter covariance and the number of points it summarizes.
#[derive(Debug, Clone, Copy)]
pub struct PlaneFit {
    pub n: Vec3,
    pub axis: MainAxis,
    pub cov: Mat3,
    pub n_points: usize,
}

impl PlaneFit {
    /// Unnormalized world-frame normal `[a, b, 1]` mapped back from the
    /// permuted frame.
    pub fn world_normal(&self) -> Vec3 {
        self.axis.unpermute(&Vec3::new(self.n.x, self.n.y, 1.0))
    }

    /// Plane offset in `normal . p + d = 0` form.
    pub fn offset(&self) -> f64 {
        self.n.z
    }

    /// Signed distance of a world point to the plane.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let m = self.world_normal();
        (m.dot(p) + self.n.z) / m.norm()
    }
}

/// First-order covariance of the solved parameters given per-point world
/// covariances. `points` must be exactly the set summarized by `acc` and
/// `n` the solution of [`solve_plane`] on it.
pub fn plane_cov(points: &[CovPoint], acc: &FitAccumulator, n: &Vec3) -> Mat3 {
    debug_assert_eq!(points.len(), acc.count);
    let (a_mat, _) = acc.normal_system();
    let det = a_mat.determinant();
    let a_inv = adjugate(&a_mat) / det;
    let p = acc.axis.matrix();
    let (a, b, d) = (n.x, n.y, n.z);

    let mut cov = Mat3::zeros();
    for pt in points {
        let q = acc.axis.permute(&pt.pos);
        let g = Vec3::new(q.x, q.y, 1.0);
        let r = a * q.x + b * q.y + q.z + d;
        // d n / d q, columns per permuted coordinate
        let cols = [
            Vec3::new(r, 0.0, 0.0) + g * a,
            Vec3::new(0.0, r, 0.0) + g * b,
            g,
        ];
        let jac = -a_inv * Mat3::from_columns(&cols);
        let sigma = p * pt.cov * p.transpose();
        cov += jac * sigma * jac.transpose();
    }
    symmetrize(&cov)
}

/// Analytic Jacobian `d n / d p_i` (world coordinates) of the solve around
/// a fitted plane; shared by [`plane_cov`] and the verification tests.
pub fn fit_jacobian(point_world: &Vec3, acc: &FitAccumulator, n: &Vec3) -> Mat3 {
    let (a_mat, _) = acc.normal_system();
    let a_inv = adjugate(&a_mat) / a_mat.determinant();
    let p = acc.axis.matrix();
    let q = acc.axis.permute(point_world);
    let g = Vec3::new(q.x, q.y, 1.0);
    let r = n.x * q.x + n.y * q.y + q.z + n.z;
    let cols = [
        Vec3::new(r, 0.0, 0.0) + g * n.x,
        Vec3::new(0.0, r, 0.0) + g * n.y,
        g,
    ];
    // chain rule through the world->permuted relabeling
    (-a_inv * Mat3::from_columns(&cols)) * p
}

/// Axis-variance based main-axis selection over raw points.
pub fn select_main_axis(points: &[Vec3]) -> MainAxis {
    let mut acc = FitAccumulator::new();
    for p in points {
        acc.add(p);
    }
    acc.choose_axis()
}

/// PCA planarity thresholds; a voxel's points count as planar when
/// `l_min/l_mid < ratio` and `l_min < abs`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanarityThresholds {
    pub ratio: f64,
    /// m^2 (eigenvalues of the sample covariance).
    pub abs: f64,
}

impl Default for PlanarityThresholds {
    fn default() -> Self {
        Self { ratio: 1.0 / 9.0, abs: 0.01 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlanarityResult {
    pub is_plane: bool,
    /// Ascending eigenvalues of the sample covariance.
    pub eigvals: [f64; 3],
}

pub fn pca_planarity(points: &[Vec3], thresholds: &PlanarityThresholds) -> PlanarityResult {
    let mut acc = FitAccumulator::new();
    for p in points {
        acc.add(p);
    }
    planarity_from_moments(&acc.centered_cov(), thresholds)
}

/// Same test from a centered covariance, used by the voxel map so cells do
/// not need their raw points for the check.
pub fn planarity_from_moments(cov: &Mat3, thresholds: &PlanarityThresholds) -> PlanarityResult {
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (l_min, l_mid) = (eig[0].max(0.0), eig[1].max(0.0));
    let is_plane = l_mid > 0.0 && l_min < thresholds.ratio * l_mid && l_min < thresholds.abs;
    PlanarityResult { is_plane, eigvals: [eig[0], eig[1], eig[2]] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{exp_so3, Frame};
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut StdRng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn accumulate(points: &[Vec3], axis: MainAxis) -> FitAccumulator {
        let mut acc = FitAccumulator::new();
        for p in points {
            acc.add(p);
        }
        acc.set_axis(axis);
        acc
    }

    #[test]
    fn select_axis_for_axis_aligned_planes() {
        let z_plane: Vec<Vec3> =
            (0..20).map(|i| Vec3::new((i % 5) as f64, (i / 5) as f64, 0.0)).collect();
        assert_eq!(select_main_axis(&z_plane), MainAxis::Z);
        let x_plane: Vec<Vec3> =
            (0..20).map(|i| Vec3::new(0.0, (i % 5) as f64, (i / 5) as f64)).collect();
        assert_eq!(select_main_axis(&x_plane), MainAxis::X);
    }

    #[test]
    fn select_axis_matches_variance_oracle() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let rot = exp_so3(&Vec3::new(randn(&mut rng), randn(&mut rng), randn(&mut rng)));
            let points: Vec<Vec3> = (0..40)
                .map(|_| {
                    rot * Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        0.01 * randn(&mut rng),
                    )
                })
                .collect();
            let axis = select_main_axis(&points);
            // direct per-axis variance oracle
            let n = points.len() as f64;
            let mean = points.iter().sum::<Vec3>() / n;
            let mut var = Vec3::zeros();
            for p in &points {
                let d = p - mean;
                var += d.component_mul(&d);
            }
            var /= n;
            let min = var.min();
            let expected = if var.z == min {
                MainAxis::Z
            } else if var.y == min {
                MainAxis::Y
            } else {
                MainAxis::X
            };
            assert_eq!(axis, expected);
        }
    }

    #[test]
    fn accumulate_single_point() {
        let mut acc = FitAccumulator::new();
        acc.add(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(acc.count(), 1);
        assert_eq!(acc.sum, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(acc.sum_sq[(0, 0)], 1.0);
        assert_eq!(acc.sum_sq[(0, 1)], 2.0);
        assert_eq!(acc.sum_sq[(1, 2)], 6.0);
        assert_eq!(acc.sum_sq[(2, 2)], 9.0);
    }

    #[test]
    fn accumulate_is_order_independent() {
        let mut rng = StdRng::seed_from_u64(3);
        let points: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(randn(&mut rng), randn(&mut rng), randn(&mut rng)))
            .collect();
        let base = accumulate(&points, MainAxis::Z);
        for _ in 0..10 {
            let mut shuffled = points.clone();
            shuffled.shuffle(&mut rng);
            let other = accumulate(&shuffled, MainAxis::Z);
            assert!((base.sum - other.sum).amax() < 1e-12);
            assert!((base.sum_sq - other.sum_sq).amax() < 1e-12);
        }
    }

    #[test]
    fn solve_plane_axis_aligned() {
        // points exactly on z = 0: n = [0,0,0]
        let pts: Vec<Vec3> =
            (0..30).map(|i| Vec3::new((i % 6) as f64 * 0.3, (i / 6) as f64 * 0.3, 0.0)).collect();
        let acc = accumulate(&pts, MainAxis::Z);
        let n = solve_plane(&acc).unwrap();
        assert!(n.amax() < 1e-12);
    }

    #[test]
    fn solve_plane_affine() {
        // z = -(x + y + 1)  =>  x + y + z + 1 = 0  =>  n = [1,1,1]
        let mut rng = StdRng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..40)
            .map(|_| {
                let x = rng.random_range(-2.0..2.0);
                let y = rng.random_range(-2.0..2.0);
                Vec3::new(x, y, -(x + y + 1.0))
            })
            .collect();
        let acc = accumulate(&pts, MainAxis::Z);
        let n = solve_plane(&acc).unwrap();
        assert!((n - Vec3::new(1.0, 1.0, 1.0)).amax() < 1e-9);
    }

    #[test]
    fn solve_matches_dense_least_squares_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let a = rng.random_range(-0.5..0.5);
            let b = rng.random_range(-0.5..0.5);
            let d = rng.random_range(-1.0..1.0);
            let pts: Vec<Vec3> = (0..50)
                .map(|_| {
                    let x = rng.random_range(-2.0..2.0);
                    let y = rng.random_range(-2.0..2.0);
                    let z = -(a * x + b * y + d) + 0.01 * randn(&mut rng);
                    Vec3::new(x, y, z)
                })
                .collect();
            let acc = accumulate(&pts, MainAxis::Z);
            let n = solve_plane(&acc).unwrap();

            // dense design-matrix SVD solve
            let m = nalgebra::DMatrix::from_fn(pts.len(), 3, |i, j| match j {
                0 => pts[i].x,
                1 => pts[i].y,
                _ => 1.0,
            });
            let rhs = nalgebra::DVector::from_fn(pts.len(), |i, _| -pts[i].z);
            let oracle = m.svd(true, true).solve(&rhs, 1e-14).unwrap();
            assert!((n - Vec3::new(oracle[0], oracle[1], oracle[2])).amax() < 1e-9);
        }
    }

    #[test]
    fn incremental_equals_batch_exactly() {
        let mut rng = StdRng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(randn(&mut rng), randn(&mut rng), 0.1 * randn(&mut rng)))
            .collect();
        let mut inc = FitAccumulator::new();
        for p in &pts {
            inc.add(p);
        }
        let batch = accumulate(&pts, MainAxis::Z);
        // same insertion order: bit-identical sums and solution
        assert_eq!(inc.sum, batch.sum);
        assert_eq!(inc.sum_sq, batch.sum_sq);
        assert_eq!(solve_plane(&inc).unwrap(), solve_plane(&batch).unwrap());
    }

    #[test]
    fn degenerate_collinear_points_rejected() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let mut acc = accumulate(&pts, MainAxis::Z);
        acc.choose_axis();
        assert_eq!(solve_plane(&acc), Err(FitError::DegenerateFit));
        let mut empty = FitAccumulator::new();
        empty.add(&Vec3::zeros());
        assert_eq!(solve_plane(&empty), Err(FitError::InsufficientPoints(1)));
    }

    #[test]
    fn near_vertical_plane_is_safe_under_selected_axis() {
        // Planes with z-normal component in [-0.05, 0.05] must never
        // degenerate once the main axis is chosen from the data.
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let nz: f64 = rng.random_range(-0.05..0.05);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - nz * nz).sqrt();
            let normal = Vec3::new(r * phi.cos(), r * phi.sin(), nz);
            let u = normal.cross(&Vec3::z()).normalize();
            let v = normal.cross(&u);
            let pts: Vec<Vec3> = (0..50)
                .map(|_| {
                    u * rng.random_range(-1.0..1.0)
                        + v * rng.random_range(-1.0..1.0)
                        + normal * (2.0 + 0.005 * randn(&mut rng))
                })
                .collect();
            let mut acc = accumulate(&pts, MainAxis::Z);
            acc.choose_axis();
            assert!(solve_plane(&acc).is_ok(), "degenerate at nz={nz}");
        }
    }

    #[test]
    fn plane_cov_zero_point_covs() {
        let pts: Vec<CovPoint> = (0..20)
            .map(|i| {
                CovPoint::exact(
                    Vec3::new((i % 5) as f64 * 0.4, (i / 5) as f64 * 0.4, 0.0),
                    Frame::World,
                )
            })
            .collect();
        let positions: Vec<Vec3> = pts.iter().map(|p| p.pos).collect();
        let acc = accumulate(&positions, MainAxis::Z);
        let n = solve_plane(&acc).unwrap();
        assert_eq!(plane_cov(&pts, &acc, &n), Mat3::zeros());
    }

    #[test]
    fn plane_cov_scales_linearly() {
        let mut rng = StdRng::seed_from_u64(17);
        let pts: Vec<CovPoint> = (0..25)
            .map(|_| {
                let pos = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.02 * randn(&mut rng),
                );
                let s = rng.random_range(1e-5..1e-3);
                CovPoint::new(pos, Mat3::identity() * s, Frame::World)
            })
            .collect();
        let positions: Vec<Vec3> = pts.iter().map(|p| p.pos).collect();
        let acc = accumulate(&positions, MainAxis::Z);
        let n = solve_plane(&acc).unwrap();
        let base = plane_cov(&pts, &acc, &n);
        let scaled: Vec<CovPoint> =
            pts.iter().map(|p| CovPoint::new(p.pos, p.cov * 4.0, p.frame)).collect();
        let big = plane_cov(&scaled, &acc, &n);
        assert!((big - base * 4.0).amax() < 1e-18 + 1e-12 * base.amax());
    }

    #[test]
    fn fit_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..20 {
            let a = rng.random_range(-0.4..0.4);
            let b = rng.random_range(-0.4..0.4);
            let d = rng.random_range(-0.5..0.5);
            let mut pts: Vec<Vec3> = (0..20)
                .map(|_| {
                    let x = rng.random_range(-1.5..1.5);
                    let y = rng.random_range(-1.5..1.5);
                    Vec3::new(x, y, -(a * x + b * y + d) + 0.01 * randn(&mut rng))
                })
                .collect();
            let acc = accumulate(&pts, MainAxis::Z);
            let n = solve_plane(&acc).unwrap();

            let idx = rng.random_range(0..pts.len());
            let jac = fit_jacobian(&pts[idx], &acc, &n);
            let h = 1e-6;
            let mut fd = Mat3::zeros();
            for c in 0..3 {
                let orig = pts[idx][c];
                pts[idx][c] = orig + h;
                let np = solve_plane(&accumulate(&pts, MainAxis::Z)).unwrap();
                pts[idx][c] = orig - h;
                let nm = solve_plane(&accumulate(&pts, MainAxis::Z)).unwrap();
                pts[idx][c] = orig;
                fd.set_column(c, &((np - nm) / (2.0 * h)));
            }
            let scale = jac.amax().max(1e-12);
            assert!(
                (jac - fd).amax() / scale < 1e-4,
                "jacobian mismatch: {:.3e}",
                (jac - fd).amax() / scale
            );
        }
    }

    #[test]
    fn pca_flags_planes_and_balls() {
        let mut rng = StdRng::seed_from_u64(23);
        let thresholds = PlanarityThresholds::default();

        let planar: Vec<Vec3> = (0..60)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let res = pca_planarity(&planar, &thresholds);
        assert!(res.is_plane);
        assert!(res.eigvals[0].abs() < 1e-12);

        let ball: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(randn(&mut rng), randn(&mut rng), randn(&mut rng)) * 0.2)
            .collect();
        assert!(!pca_planarity(&ball, &thresholds).is_plane);

        let slab: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(0.2 * randn(&mut rng), 0.2 * randn(&mut rng), 0.01 * randn(&mut rng))
            })
            .collect();
        assert!(pca_planarity(&slab, &thresholds).is_plane);
    }

    #[test]
    fn permuted_axes_round_trip() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        for axis in [MainAxis::X, MainAxis::Y, MainAxis::Z] {
            assert_eq!(axis.unpermute(&axis.permute(&p)), p);
            assert_eq!(axis.matrix() * p, axis.permute(&p));
            // cyclic permutations are rotations
            assert!((axis.matrix().determinant() - 1.0).abs() < 1e-15);
        }
    }
}
