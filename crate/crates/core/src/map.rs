//! Spatial-hash voxel map over plane features.
//!
//! Each cell is a union-find node. It accumulates points until it holds
//! `max_points`, at which point the plane fit and its covariance are frozen,
//! the raw points are discarded, and the cell becomes eligible for merging
//! with coplanar neighbors. Merged cells keep only a parent key; plane
//! parameters live on root cells.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::geom::{CovPoint, Frame, Vec3};
use crate::plane::{
    planarity_from_moments, solve_plane, FitAccumulator, PlanarityThresholds, PlaneFit,
};

/// Integer voxel index, `floor(p / voxel_size)` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    /// The 6 face-adjacent neighbor keys.
    pub fn face_neighbors(&self) -> [VoxelKey; 6] {
        let Self { ix, iy, iz } = *self;
        [
            Self::new(ix + 1, iy, iz),
            Self::new(ix - 1, iy, iz),
            Self::new(ix, iy + 1, iz),
            Self::new(ix, iy - 1, iz),
            Self::new(ix, iy, iz + 1),
            Self::new(ix, iy, iz - 1),
        ]
    }

    /// The full 26-cell neighborhood.
    pub fn all_neighbors(&self) -> Vec<VoxelKey> {
        let mut out = Vec::with_capacity(26);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    out.push(Self::new(self.ix + dx, self.iy + dy, self.iz + dz));
                }
            }
        }
        out
    }
}

impl Hash for VoxelKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // standard 3-integer spatial mix
        let h = (self.ix as i64).wrapping_mul(73_856_093)
            ^ (self.iy as i64).wrapping_mul(19_349_663)
            ^ (self.iz as i64).wrapping_mul(83_492_791);
        state.write_i64(h);
    }
}

/// Voxel index of a world point under half-open cells `[k*s, (k+1)*s)`.
pub fn voxel_key(p: &Vec3, voxel_size: f64) -> VoxelKey {
    VoxelKey {
        ix: (p.x / voxel_size).floor() as i32,
        iy: (p.y / voxel_size).floor() as i32,
        iz: (p.z / voxel_size).floor() as i32,
    }
}

/// A cell still gathering points: running sums, the retained points (needed
/// to recompute the parameter covariance), and the current fit if the cell
/// already looks planar.
#[derive(Debug, Clone)]
pub struct AccumCell {
    pub acc: FitAccumulator,
    pub points: Vec<CovPoint>,
    pub fit: Option<PlaneFit>,
}

/// A converged union-find root: frozen plane parameters plus the keys of
/// the cells merged under it.
#[derive(Debug, Clone)]
pub struct RootCell {
    pub plane: PlaneFit,
    pub kids: Vec<VoxelKey>,
}

impl RootCell {
    /// Union-by-size weight: this cell plus everything merged under it.
    pub fn kid_count(&self) -> usize {
        self.kids.len() + 1
    }
}

#[derive(Debug, Clone)]
pub enum VoxelCell {
    Accumulating(AccumCell),
    Converged(RootCell),
    /// Reached `max_points` without ever passing the planarity test; frozen
    /// and never matched or merged.
    NonPlanar,
    /// Union-find child: all plane storage released, only the parent link
    /// remains.
    Merged { parent: VoxelKey },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelMapConfig {
    /// Voxel side length, meters.
    pub voxel_size: f64,
    /// Point count at which a cell converges and discards its points.
    pub max_points: usize,
    /// Minimum points before a fit is attempted.
    pub min_fit_points: usize,
    pub planarity: PlanarityThresholds,
}

impl Default for VoxelMapConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            max_points: 50,
            min_fit_points: 10,
            planarity: PlanarityThresholds::default(),
        }
    }
}

impl VoxelMapConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.voxel_size.is_nan() || self.voxel_size <= 0.0 {
            return Err(format!("voxel_size must be > 0, got {}", self.voxel_size));
        }
        if self.max_points < self.min_fit_points {
            return Err(format!(
                "max_points ({}) must be >= min_fit_points ({})",
                self.max_points, self.min_fit_points
            ));
        }
        if self.min_fit_points < 3 {
            return Err("min_fit_points must be >= 3".into());
        }
        Ok(())
    }
}

/// Counts of cells per lifecycle state plus storage estimates.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MapStats {
    pub accumulating: usize,
    pub converged_roots: usize,
    pub merged: usize,
    pub non_planar: usize,
    /// Bytes spent on plane parameters (n + covariance) across the map.
    pub plane_param_bytes: usize,
    /// Bytes spent on retained points in accumulating cells.
    pub retained_point_bytes: usize,
    /// Bytes of union-find bookkeeping (parent links + kid lists).
    pub union_find_bytes: usize,
}

impl MapStats {
    pub fn total_cells(&self) -> usize {
        self.accumulating + self.converged_roots + self.merged + self.non_planar
    }

    /// Structured text report for the benchmark harness.
    pub fn report(&self) -> String {
        format!(
            "cells total={} accumulating={} converged_roots={} merged={} non_planar={}\n\
             bytes plane_params={} retained_points={} union_find={}\n",
            self.total_cells(),
            self.accumulating,
            self.converged_roots,
            self.merged,
            self.non_planar,
            self.plane_param_bytes,
            self.retained_point_bytes,
            self.union_find_bytes,
        )
    }
}

/// Per-plane storage cost used in the stats: `n` (3 f64) + covariance
/// (9 f64) + axis tag + point count.
pub const PLANE_PARAM_BYTES: usize = std::mem::size_of::<PlaneFit>();
const COV_POINT_BYTES: usize = std::mem::size_of::<CovPoint>();
const KEY_BYTES: usize = std::mem::size_of::<VoxelKey>();

#[derive(Debug, Clone)]
pub struct VoxelMap {
    pub(crate) cells: HashMap<VoxelKey, VoxelCell>,
    pub(crate) cfg: VoxelMapConfig,
}

impl VoxelMap {
    pub fn new(cfg: VoxelMapConfig) -> Self {
        Self { cells: HashMap::new(), cfg }
    }

    pub fn config(&self) -> &VoxelMapConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&VoxelCell> {
        self.cells.get(key)
    }

    /// Insert world-frame points. Cells that cross `max_points` converge:
    /// their fit is frozen, their raw points are discarded, and their keys
    /// are returned as the newly converging set for the merge pass.
    pub fn insert_scan(&mut self, points: &[CovPoint]) -> Vec<VoxelKey> {
        // first-touch order so the merge pass is deterministic
        let mut touched: Vec<VoxelKey> = Vec::new();
        let mut seen: std::collections::HashSet<VoxelKey> = std::collections::HashSet::new();
        for p in points {
            debug_assert_eq!(p.frame, Frame::World);
            if !p.pos.iter().all(|v| v.is_finite()) {
                continue;
            }
            let key = voxel_key(&p.pos, self.cfg.voxel_size);
            let cell = self.cells.entry(key).or_insert_with(|| {
                VoxelCell::Accumulating(AccumCell {
                    acc: FitAccumulator::new(),
                    points: Vec::new(),
                    fit: None,
                })
            });
            // converged / merged / non-planar cells ignore new points
            if let VoxelCell::Accumulating(cell) = cell {
                cell.acc.add(&p.pos);
                cell.points.push(*p);
                if seen.insert(key) {
                    touched.push(key);
                }
            }
        }

        let mut converged = Vec::new();
        for key in touched {
            let Some(VoxelCell::Accumulating(cell)) = self.cells.get_mut(&key) else {
                continue;
            };
            if cell.acc.count() >= self.cfg.max_points {
                let next = Self::finalize_cell(cell, &self.cfg);
                if matches!(next, VoxelCell::Converged(_)) {
                    converged.push(key);
                }
                self.cells.insert(key, next);
            } else if cell.acc.count() >= self.cfg.min_fit_points {
                cell.fit = Self::try_fit(cell, &self.cfg);
            }
        }
        converged
    }

    fn try_fit(cell: &mut AccumCell, cfg: &VoxelMapConfig) -> Option<PlaneFit> {
        cell.acc.choose_axis();
        let planarity = planarity_from_moments(&cell.acc.centered_cov(), &cfg.planarity);
        if !planarity.is_plane {
            return None;
        }
        let n = solve_plane(&cell.acc).ok()?;
        let cov = crate::plane::plane_cov(&cell.points, &cell.acc, &n);
        Some(PlaneFit { n, axis: cell.acc.axis(), cov, n_points: cell.acc.count() })
    }

    fn finalize_cell(cell: &mut AccumCell, cfg: &VoxelMapConfig) -> VoxelCell {
        match Self::try_fit(cell, cfg) {
            Some(plane) => VoxelCell::Converged(RootCell { plane, kids: Vec::new() }),
            None => VoxelCell::NonPlanar,
        }
    }

    /// Chase parent links to the root key. Chains are pruned to one hop
    /// after every merge, so this loop is effectively O(1).
    pub fn find_root(&self, key: &VoxelKey) -> Option<VoxelKey> {
        let mut current = *key;
        loop {
            match self.cells.get(&current)? {
                VoxelCell::Merged { parent } => current = *parent,
                _ => return Some(current),
            }
        }
    }

    /// Look up the plane responsible for a world position: hash the voxel,
    /// then resolve the union-find root. Converged roots return their
    /// (possibly fused) frozen plane; cells still accumulating return
    /// their current fit, whose covariance reflects the smaller point
    /// count, so young planes are matchable but weighted accordingly.
    pub fn query_plane(&self, p: &Vec3) -> Option<(&PlaneFit, VoxelKey)> {
        let key = voxel_key(p, self.cfg.voxel_size);
        let root = self.find_root(&key)?;
        match self.cells.get(&root)? {
            VoxelCell::Converged(cell) => Some((&cell.plane, root)),
            VoxelCell::Accumulating(cell) => cell.fit.as_ref().map(|fit| (fit, root)),
            _ => None,
        }
    }

    pub fn stats(&self) -> MapStats {
        let mut s = MapStats::default();
        for cell in self.cells.values() {
            match cell {
                VoxelCell::Accumulating(c) => {
                    s.accumulating += 1;
                    s.retained_point_bytes += c.points.len() * COV_POINT_BYTES;
                    if c.fit.is_some() {
                        s.plane_param_bytes += PLANE_PARAM_BYTES;
                    }
                }
                VoxelCell::Converged(c) => {
                    s.converged_roots += 1;
                    s.plane_param_bytes += PLANE_PARAM_BYTES;
                    s.union_find_bytes += c.kids.len() * KEY_BYTES;
                }
                VoxelCell::Merged { .. } => {
                    s.merged += 1;
                    s.union_find_bytes += KEY_BYTES;
                }
                VoxelCell::NonPlanar => s.non_planar += 1,
            }
        }
        s
    }

    /// Plane-parameter bytes held by one cell; merged and non-planar cells
    /// must report zero.
    pub fn cell_plane_bytes(&self, key: &VoxelKey) -> Option<usize> {
        Some(match self.cells.get(key)? {
            VoxelCell::Converged(_) => PLANE_PARAM_BYTES,
            VoxelCell::Accumulating(c) if c.fit.is_some() => PLANE_PARAM_BYTES,
            _ => 0,
        })
    }

    /// Longest parent chain (in hops) over all merged cells. The merge
    /// invariant keeps this at 1.
    pub fn max_chain_hops(&self) -> usize {
        let mut max = 0;
        for (key, cell) in &self.cells {
            if let VoxelCell::Merged { .. } = cell {
                let mut hops = 0;
                let mut current = *key;
                while let Some(VoxelCell::Merged { parent }) = self.cells.get(&current) {
                    current = *parent;
                    hops += 1;
                    assert!(hops <= self.cells.len(), "parent cycle at {key:?}");
                }
                max = max.max(hops);
            }
        }
        max
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }
}
