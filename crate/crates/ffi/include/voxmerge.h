/* C ABI for the voxmerge mapping and odometry library. */

#ifndef VOXMERGE_H
#define VOXMERGE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum {
  VM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  VM_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument failed validation (see the matching Rust config rules).
   */
  VM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Lookup found nothing (e.g. no plane at the queried position).
   */
  VM_STATUS_NOT_FOUND = 3,
  /**
   * A numerical step failed (singular system, non-finite values).
   */
  VM_STATUS_NUMERICAL = 4,
  /**
   * Internal panic; the handle should be discarded.
   */
  VM_STATUS_INTERNAL = 5,
} VmStatus;

/**
 * Opaque mergeable voxel map handle.
 */
typedef struct VmMap VmMap;

/**
 * Opaque odometry session handle.
 */
typedef struct VmOdometry VmOdometry;

/**
 * Result of one merge pass.
 */
typedef struct {
  uint64_t pairs_tested;
  uint64_t pairs_merged;
  uint64_t roots_before;
  uint64_t roots_after;
  uint64_t bytes_freed;
} VmMergeReport;

/**
 * Plane parameters under a main axis: `a*x' + b*y' + z' + d = 0` in the
 * permuted frame, `n = [a, b, d]`, row-major 3x3 covariance.
 */
typedef struct {
  double n[3];
  double cov[9];
  /**
   * 0 = X, 1 = Y, 2 = Z.
   */
  uint32_t main_axis;
  uint64_t n_points;
} VmPlane;

/**
 * Cell counts and storage footprint of the map.
 */
typedef struct {
  uint64_t accumulating;
  uint64_t converged_roots;
  uint64_t merged;
  uint64_t non_planar;
  uint64_t plane_param_bytes;
  uint64_t retained_point_bytes;
} VmMapStats;

/**
 * Pose as translation + unit quaternion (x, y, z, w).
 */
typedef struct {
  double t;
  double translation[3];
  double quaternion[4];
} VmPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a map with the given voxel size (meters), convergence point
 * count and minimum fit count. Returns null on invalid arguments.
 */
VmMap *vm_map_new(double voxel_size, uint32_t max_points, uint32_t min_fit_points);

/**
 * Release a map handle. Null is ignored.
 *
 * # Safety
 * `map` must be null or a pointer returned by [`vm_map_new`] that has
 * not been freed yet.
 */
void vm_map_free(VmMap *map);

/**
 * Set the coplanarity gate (chi-square threshold) used by merge passes.
 *
 * # Safety
 * `map` must be null or a live handle from [`vm_map_new`].
 */
VmStatus vm_map_set_merge_threshold(VmMap *map, double chi2);

/**
 * Insert `n` world-frame points given as packed xyz triples. `cov9` may
 * be null (exact points) or hold one row-major 3x3 covariance per point.
 * `newly_converged_out` (nullable) receives the number of cells that
 * converged during this insertion; they are queued for the next
 * `vm_map_merge` call.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles and `cov9` to `9 * n` doubles when
 * non-null.
 */
VmStatus vm_map_insert(VmMap *map,
                       const double *xyz,
                       const double *cov9,
                       uintptr_t n,
                       uintptr_t *newly_converged_out);

/**
 * Merge all cells that converged since the last merge pass.
 *
 * # Safety
 * `map` must be null or a live handle; `report_out` null or valid.
 */
VmStatus vm_map_merge(VmMap *map, VmMergeReport *report_out);

/**
 * Look up the root plane owning the voxel that contains `(x, y, z)`.
 *
 * # Safety
 * `map` must be null or a live handle; `plane_out_ptr` null or valid.
 */
VmStatus vm_map_query(const VmMap *map, double x, double y, double z, VmPlane *plane_out_ptr);

/**
 * Cell counts and storage footprint.
 *
 * # Safety
 * `map` must be null or a live handle; `stats_out` null or valid.
 */
VmStatus vm_map_stats(const VmMap *map, VmMapStats *stats_out);

/**
 * Create an odometry session. `config_toml` may be null for defaults or
 * point to a NUL-terminated TOML document using the same schema as the
 * CLI config file. Returns null when the config is invalid.
 *
 * # Safety
 * `config_toml` must be null or point to a valid NUL-terminated string.
 */
VmOdometry *vm_odometry_new(const char *config_toml);

/**
 * Release an odometry handle. Null is ignored.
 *
 * # Safety
 * `odom` must be null or a pointer returned by [`vm_odometry_new`] that
 * has not been freed yet.
 */
void vm_odometry_free(VmOdometry *odom);

/**
 * Buffer one IMU sample (body angular rate rad/s, specific force m/s^2).
 * Samples must arrive in time order.
 *
 * # Safety
 * `gyro` and `acc` must each point to 3 doubles.
 */
VmStatus vm_odometry_push_imu(VmOdometry *odom, double t, const double *gyro, const double *acc);

/**
 * Process one deskewed scan of `n` sensor-frame points (packed xyz
 * triples, meters) stamped `t`; the updated pose is written to
 * `pose_out`. In `lidar_inertial` mode buffered IMU samples up to `t`
 * drive the prediction.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles.
 */
VmStatus vm_odometry_push_scan(VmOdometry *odom,
                               double t,
                               const double *xyz,
                               uintptr_t n,
                               VmPose *pose_out);

/**
 * Current pose estimate without processing anything.
 *
 * # Safety
 * `odom` must be null or a live handle; `pose_out` null or valid.
 */
VmStatus vm_odometry_pose(const VmOdometry *odom, VmPose *pose_out);

/**
 * Map statistics of the odometry session's internal map.
 *
 * # Safety
 * `odom` must be null or a live handle; `stats_out` null or valid.
 */
VmStatus vm_odometry_map_stats(const VmOdometry *odom, VmMapStats *stats_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXMERGE_H */
