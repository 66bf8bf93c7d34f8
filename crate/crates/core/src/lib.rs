//! Mergeable voxel plane mapping and LiDAR(-inertial) odometry.
//!
//! The map keeps one 3DOF plane feature (`[a, b, d]` with covariance) per
//! voxel, fitted incrementally from running sums. Converged coplanar voxels
//! are merged through union-find into shared father planes whose fused
//! parameters are both more accurate and cheaper to store. Scan
//! registration runs an iterated error-state Kalman filter on
//! point-to-plane residuals against the merged planes.
//!
//! The crate ships a synthetic scene/trajectory simulator, dataset file
//! formats, trajectory evaluation, and a `voxmerge` CLI wrapping the whole
//! pipeline.

pub mod filter;
pub mod config;
pub mod eval;
pub mod geom;
pub mod io;
pub mod map;
pub mod merge;
pub mod noise;
pub mod pipeline;
pub mod plane;
pub mod sim;

pub use geom::{CovPoint, Frame, RigidTransform};
pub use map::{voxel_key, MapStats, VoxelCell, VoxelKey, VoxelMap, VoxelMapConfig};
pub use merge::{fuse, mahalanobis, MergeConfig, MergeReport, Neighborhood};
pub use noise::{decompose, point_cov_sensor, point_cov_world, LidarNoiseSpec, PoseUncertainty};
pub use plane::{
    pca_planarity, plane_cov, select_main_axis, solve_plane, FitAccumulator, MainAxis, PlaneFit,
};
