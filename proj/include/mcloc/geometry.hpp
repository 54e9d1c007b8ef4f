#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mcloc/pose.hpp"

namespace mcloc {

struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RigCamera {
  int camera_id = 0;
  Pose rig_from_camera;
  double fov_half_angle = M_PI / 3.0;  // radians, in (0, pi)
};

/// Rigid multi-camera rig with fixed extrinsics. Camera ids must be unique.
class CameraRig {
 public:
  CameraRig() = default;
  explicit CameraRig(std::vector<RigCamera> cameras);

  const std::vector<RigCamera>& cameras() const { return cameras_; }
  std::size_t size() const { return cameras_.size(); }
  const RigCamera& camera(int camera_id) const;
  bool has_camera(int camera_id) const;

 private:
  std::vector<RigCamera> cameras_;
};

/// Unit bearing observed by one rig camera, expressed in that camera's frame.
struct BearingFeature {
  int camera_id = 0;
  Vec3 bearing = Vec3::UnitZ();
  int descriptor_id = 0;
};

/// Angle between the observed bearing and the camera-to-point direction,
/// both taken in the world frame. Throws DegenerateError if the point sits
/// on the camera center.
double angular_error(const Pose& rig_pose, const CameraRig& rig, int camera_id,
                     const Vec3& bearing, const Vec3& point);

/// 2-dof tangent-plane deviation of direction v from unit bearing u, with
/// norm equal to the angle between them (log map on the unit sphere at u).
Vec2 bearing_tangent_residual(const Vec3& u, const Vec3& v);

/// Orthonormal basis of the plane orthogonal to unit vector u (3x2).
Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& u);

struct BearingResidual {
  Vec2 value;
  // Jacobian wrt a right-multiplicative rig pose increment (omega, tau).
  Eigen::Matrix<double, 2, 6> jacobian;
};

/// Residual between the bearing observed by `camera_id` and the direction to
/// `point` under rig pose `T`, plus its pose Jacobian.
BearingResidual bearing_residual_with_jacobian(const Pose& T, const CameraRig& rig,
                                               int camera_id, const Vec3& bearing,
                                               const Vec3& point);

}  // namespace mcloc
