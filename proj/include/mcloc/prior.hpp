#pragma once

#include <cstdint>
#include <vector>

#include "mcloc/geometry.hpp"

namespace mcloc {

/// Uncertain pose prior: the true rig position lies within `position_radius`
/// of the prior position and the true heading within `heading_half_angle` of
/// the prior heading.
struct PosePrior {
  Pose prior_pose;                                 // world-from-rig
  double position_radius = 50.0;                   // meters
  double heading_half_angle = 10.0 * M_PI / 180.0;  // radians
};

struct FilterConfig {
  double base_inlier_angle = 1.0 * M_PI / 180.0;  // alpha, radians
};

/// Widened cone half-angle alpha' = alpha + 2*theta. Throws std::domain_error
/// unless 0 < alpha and alpha + 2*theta < pi/2.
double expanded_cone_angle(double alpha, double theta);

/// Euclidean distance from a point to the solid one-sided cone with the given
/// apex, unit axis, and half-angle in (0, pi/2). Points behind the apex
/// measure to the apex; points inside return 0.
double distance_to_cone(const Vec3& apex, const Vec3& axis, double half_angle,
                        const Vec3& point);

bool sphere_intersects_cone(const Vec3& apex, const Vec3& axis, double half_angle,
                            const Vec3& center, double radius);

struct CandidatePoint {
  std::uint64_t point_id = 0;
  Vec3 position = Vec3::Zero();
};

/// Per-frame gate precomputed from a prior: camera centers and axes under the
/// prior pose, widened angles, and lever-arm-inflated sphere radii.
class PriorGate {
 public:
  PriorGate(const PosePrior& prior, const FilterConfig& cfg, const CameraRig& rig);

  /// True when the candidate point's uncertainty sphere intersects the
  /// widened cone of (camera_id, bearing) under the prior pose.
  bool admits(int camera_id, const Vec3& bearing_cam, const Vec3& point) const;

  double widened_half_angle() const { return half_angle_; }

 private:
  struct PerCamera {
    int camera_id;
    Vec3 apex;        // camera center under the prior pose
    Mat3 world_from_camera;
    double radius;    // position_radius + lever arm * sin(theta)
  };
  double half_angle_;
  std::vector<PerCamera> cams_;
  const PerCamera& cam(int camera_id) const;
};

/// Order-preserving geometric pre-filter of match candidates for one feature.
std::vector<CandidatePoint> filter_candidates(const PosePrior& prior, const FilterConfig& cfg,
                                              const CameraRig& rig, int camera_id,
                                              const Vec3& bearing,
                                              const std::vector<CandidatePoint>& candidates);

}  // namespace mcloc
