//! Merging of converged coplanar voxel planes through union-find.
//!
//! Newly converged cells are gated against the roots of their neighbor
//! cells with a Mahalanobis test on the 3DOF parameters; passing pairs are
//! united (larger kid count wins), the surviving root receives the
//! trace-weighted fusion of the two parameter sets, and the losing root's
//! kids are re-parented directly under the survivor so every chain stays
//! one hop long.

use serde::{Deserialize, Serialize};

use crate::geom::Mat3;
use crate::map::{RootCell, VoxelCell, VoxelKey, VoxelMap, PLANE_PARAM_BYTES};
use crate::plane::PlaneFit;

/// 95% quantile of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_3DOF_95: f64 = 7.8147;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// 6 face-adjacent voxels.
    Face6,
    /// Full 26-cell neighborhood.
    Full26,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    /// Coplanarity gate on the Mahalanobis distance of the parameter
    /// difference.
    pub chi2_threshold: f64,
    pub neighborhood: Neighborhood,
    /// Planes fitted under different main axes are never compared; their
    /// `[a, b, d]` vectors live in different parameterizations.
    pub require_same_axis: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            chi2_threshold: CHI2_3DOF_95,
            neighborhood: Neighborhood::Face6,
            require_same_axis: true,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.chi2_threshold.is_nan() || self.chi2_threshold <= 0.0 {
            return Err(format!("chi2_threshold must be > 0, got {}", self.chi2_threshold));
        }
        Ok(())
    }
}

/// Outcome of one merge pass, serialized into the run diagnostics.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MergeReport {
    pub pairs_tested: usize,
    pub pairs_merged: usize,
    pub roots_before: usize,
    pub roots_after: usize,
    pub bytes_freed: usize,
    /// Gate evaluations that needed the epsilon regularizer on a singular
    /// covariance sum.
    pub regularized_gates: usize,
}

/// Mahalanobis distance between two plane parameter vectors:
/// `(n1-n2)^T (S1+S2)^-1 (n1-n2)`. Returns the distance and whether the
/// covariance sum had to be regularized with `1e-12 * I`.
pub fn mahalanobis_checked(p1: &PlaneFit, p2: &PlaneFit) -> (f64, bool) {
    debug_assert_eq!(p1.axis, p2.axis, "planes under different main axes are not comparable");
    let dn = p1.n - p2.n;
    let sum = p1.cov + p2.cov;
    let (inv, regularized) = match sum.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => (inv, false),
        _ => {
            let reg = sum + Mat3::identity() * 1e-12;
            (reg.try_inverse().unwrap_or_else(|| Mat3::identity() * 1e12), true)
        }
    };
    ((dn.transpose() * inv * dn)[0].max(0.0), regularized)
}

pub fn mahalanobis(p1: &PlaneFit, p2: &PlaneFit) -> f64 {
    mahalanobis_checked(p1, p2).0
}

/// Trace-weighted fusion of two plane estimates:
///
/// ```text
/// n = (t2*n1 + t1*n2) / (t1 + t2)
/// S = (t2^2*S1 + t1^2*S2) / (t1 + t2)^2
/// ```
///
/// with `ti = trace(Si)`; the fused trace is `t1*t2/(t1+t2)`, strictly
/// below both inputs. Two exact planes (`t1 + t2 == 0`) return the first
/// argument verbatim.
pub fn fuse(p1: &PlaneFit, p2: &PlaneFit) -> PlaneFit {
    debug_assert_eq!(p1.axis, p2.axis);
    let t1 = p1.cov.trace();
    let t2 = p2.cov.trace();
    let total = t1 + t2;
    if total == 0.0 {
        return *p1;
    }
    // weights first: equal traces give exactly 0.5 each
    let w1 = t2 / total;
    let w2 = t1 / total;
    let n = p1.n * w1 + p2.n * w2;
    let cov = p1.cov * (w1 * w1) + p2.cov * (w2 * w2);
    PlaneFit { n, axis: p1.axis, cov, n_points: p1.n_points + p2.n_points }
}

impl VoxelMap {
    fn count_roots(&self) -> usize {
        self.cells.values().filter(|c| matches!(c, VoxelCell::Converged(_))).count()
    }

    /// Run the merge pass over a newly converged set. For each new plane,
    /// every neighbor's root is gated against the new plane's root; passing
    /// pairs are united and fused, and the losing root's subtree is pruned
    /// flat under the survivor.
    pub fn merge_converged(&mut self, converging: &[VoxelKey], cfg: &MergeConfig) -> MergeReport {
        let mut report = MergeReport { roots_before: self.count_roots(), ..Default::default() };

        for kid_key in converging {
            let neighbors: Vec<VoxelKey> = match cfg.neighborhood {
                Neighborhood::Face6 => kid_key.face_neighbors().to_vec(),
                Neighborhood::Full26 => kid_key.all_neighbors(),
            };
            for nb_key in neighbors {
                if !self.cells.contains_key(&nb_key) {
                    continue;
                }
                let Some(kid_root) = self.find_root(kid_key) else { continue };
                let Some(nb_root) = self.find_root(&nb_key) else { continue };
                if kid_root == nb_root {
                    continue;
                }
                let Some(VoxelCell::Converged(kid_cell)) = self.cells.get(&kid_root) else {
                    continue;
                };
                let Some(VoxelCell::Converged(nb_cell)) = self.cells.get(&nb_root) else {
                    continue;
                };
                if cfg.require_same_axis && kid_cell.plane.axis != nb_cell.plane.axis {
                    continue;
                }
                report.pairs_tested += 1;
                let (gamma, regularized) =
                    mahalanobis_checked(&kid_cell.plane, &nb_cell.plane);
                if regularized {
                    report.regularized_gates += 1;
                }
                if gamma > cfg.chi2_threshold {
                    continue;
                }
                let fused = fuse(&kid_cell.plane, &nb_cell.plane);
                // union by size; ties keep the pre-existing (neighbor) root
                let (winner, loser) = if kid_cell.kid_count() > nb_cell.kid_count() {
                    (kid_root, nb_root)
                } else {
                    (nb_root, kid_root)
                };
                self.unite(winner, loser, fused);
                report.pairs_merged += 1;
                report.bytes_freed += PLANE_PARAM_BYTES;
            }
        }

        report.roots_after = self.count_roots();
        report
    }

    /// Demote `loser` under `winner`, re-parent the loser's kids directly
    /// to the winner (pruning), and store the fused parameters on the
    /// winner. The loser's plane storage is released here.
    fn unite(&mut self, winner: VoxelKey, loser: VoxelKey, fused: PlaneFit) {
        let loser_cell = self.cells.insert(loser, VoxelCell::Merged { parent: winner });
        let Some(VoxelCell::Converged(RootCell { kids: loser_kids, .. })) = loser_cell else {
            unreachable!("unite called on a non-root loser");
        };
        for kid in &loser_kids {
            self.cells.insert(*kid, VoxelCell::Merged { parent: winner });
        }
        let Some(VoxelCell::Converged(root)) = self.cells.get_mut(&winner) else {
            unreachable!("unite called on a non-root winner");
        };
        root.plane = fused;
        root.kids.push(loser);
        root.kids.extend(loser_kids);
    }
}
