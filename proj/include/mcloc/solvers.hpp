#pragma once

#include <array>
#include <vector>

#include "mcloc/geometry.hpp"

namespace mcloc {

/// One ray-point constraint for the generalized (non-central) pose problem.
/// Ray origin and direction live in the rig frame; the point in the world.
struct RayPoint {
  Vec3 origin;
  Vec3 direction;  // unit
  Vec3 point;
};

/// Minimal absolute pose of a generalized camera from 3 ray-point pairs.
/// Reduces the three pairwise depth constraints to a degree-8 polynomial,
/// extracts real roots via the companion matrix, polishes depths with Newton
/// steps, and keeps every pose that reprojects all three rays. Throws
/// DegenerateError on collinear points or duplicated rays.
std::vector<Pose> gp3p_solve(const std::array<RayPoint, 3>& corrs);

/// Angular reprojection error of one correspondence under a rig pose.
double ray_point_angle(const Pose& world_from_rig, const RayPoint& c);

struct PoseObservation {
  int camera_id = 0;
  Vec3 bearing = Vec3::UnitZ();  // camera frame, unit
  Vec3 point = Vec3::Zero();     // world
};

struct RefineOptions {
  int max_iterations = 20;
  double min_cost_decrease = 1e-12;
};

struct RefineResult {
  Pose pose;
  bool refined = false;  // false when the normal equations were unusable
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
};

/// Levenberg-damped Gauss-Newton on Cauchy-robustified tangent-plane
/// residuals. The robust cost never increases; `robust_threshold` is the
/// Cauchy scale in radians. Requires at least 4 observations.
RefineResult refine_pose(const Pose& initial, const std::vector<PoseObservation>& obs,
                         const CameraRig& rig, double robust_threshold,
                         const RefineOptions& opts = {});

}  // namespace mcloc
