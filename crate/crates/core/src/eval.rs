//! Trajectory evaluation: absolute trajectory error with optional rigid
//! alignment, and start-to-end loop error.

use thiserror::Error;

use crate::geom::{Mat3, Vec3};
use crate::io::TrajectoryFile;

/// Association window for matching estimate and ground-truth timestamps.
pub const ASSOC_WINDOW_SECS: f64 = 0.01;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectories share fewer than 2 poses within {ASSOC_WINDOW_SECS} s")]
    TooFewAssociations,
    #[error("trajectory has fewer than 2 poses")]
    TooFewPoses,
}

/// Pair rows of two trajectories whose timestamps agree within the
/// association window. Both inputs must be time sorted.
pub fn associate_timestamps<'a>(
    est: &'a TrajectoryFile,
    gt: &'a TrajectoryFile,
) -> Vec<(&'a Vec3, &'a Vec3)> {
    let mut pairs = Vec::new();
    let mut j = 0;
    for row in &est.rows {
        while j + 1 < gt.rows.len()
            && (gt.rows[j + 1].t - row.t).abs() <= (gt.rows[j].t - row.t).abs()
        {
            j += 1;
        }
        if j < gt.rows.len() && (gt.rows[j].t - row.t).abs() <= ASSOC_WINDOW_SECS {
            pairs.push((&row.trans, &gt.rows[j].trans));
        }
    }
    pairs
}

/// Closed-form rigid alignment (rotation + translation) mapping `src`
/// points onto `dst` in the least-squares sense.
pub fn rigid_align(src: &[&Vec3], dst: &[&Vec3]) -> (Mat3, Vec3) {
    let n = src.len() as f64;
    let c_src = src.iter().fold(Vec3::zeros(), |a, p| a + **p) / n;
    let c_dst = dst.iter().fold(Vec3::zeros(), |a, p| a + **p) / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (**s - c_src) * (**d - c_dst).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Mat3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = vt.transpose() * d * u.transpose();
    let trans = c_dst - rot * c_src;
    (rot, trans)
}

/// RMSE of translational residuals between the estimate and ground truth,
/// optionally after best-fit rigid alignment.
pub fn compute_ate(est: &TrajectoryFile, gt: &TrajectoryFile, align: bool) -> Result<f64, EvalError> {
    let pairs = associate_timestamps(est, gt);
    if pairs.len() < 2 {
        return Err(EvalError::TooFewAssociations);
    }
    let (rot, trans) = if align {
        let src: Vec<&Vec3> = pairs.iter().map(|(s, _)| *s).collect();
        let dst: Vec<&Vec3> = pairs.iter().map(|(_, d)| *d).collect();
        rigid_align(&src, &dst)
    } else {
        (Mat3::identity(), Vec3::zeros())
    };
    let sum_sq: f64 =
        pairs.iter().map(|(s, d)| (rot * **s + trans - **d).norm_squared()).sum();
    Ok((sum_sq / pairs.len() as f64).sqrt())
}

/// Distance between the first and last estimated positions; ground-truth
/// loops return to their origin, so this measures accumulated drift.
pub fn end_to_end_error(est: &TrajectoryFile) -> Result<f64, EvalError> {
    if est.rows.len() < 2 {
        return Err(EvalError::TooFewPoses);
    }
    let first = est.rows.first().unwrap().trans;
    let last = est.rows.last().unwrap().trans;
    Ok((last - first).norm())
}

/// Total path length of a trajectory (sum of consecutive displacements).
pub fn path_length(traj: &TrajectoryFile) -> f64 {
    traj.rows.windows(2).map(|w| (w[1].trans - w[0].trans).norm()).sum()
}
