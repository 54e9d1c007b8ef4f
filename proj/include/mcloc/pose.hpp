#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mcloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Quat = Eigen::Quaterniond;

Mat3 skew(const Vec3& v);

// Rotation vector <-> rotation matrix, with small-angle series near zero.
Mat3 so3_exp(const Vec3& phi);
Vec3 so3_log(const Mat3& R);

// Inverse of the right Jacobian of so3_log at phi (and its left counterpart).
// Used to propagate pose increments through the log map.
Mat3 so3_right_jacobian_inv(const Vec3& phi);
Mat3 so3_left_jacobian_inv(const Vec3& phi);

/// Rigid transform, conventionally world-from-rig: x_world = q * x_rig + t.
struct Pose {
  Quat q{1.0, 0.0, 0.0, 0.0};
  Vec3 t{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Quat& q_in, const Vec3& t_in) : q(q_in.normalized()), t(t_in) {}
  Pose(const Mat3& R, const Vec3& t_in) : q(Quat(R).normalized()), t(t_in) {}

  static Pose identity() { return Pose(); }

  Mat3 rotation() const { return q.toRotationMatrix(); }

  Vec3 act(const Vec3& x) const { return q * x + t; }

  Pose compose(const Pose& other) const {
    return Pose(q * other.q, q * other.t + t);
  }

  Pose inverse() const {
    Quat qi = q.conjugate();
    return Pose(qi, -(qi * t));
  }

  // Right-multiplicative increment: rotation by exp(omega) in the body frame,
  // translation additive in the parent frame.
  Pose retract(const Vec3& omega, const Vec3& tau) const {
    return Pose(q * Quat(Eigen::AngleAxisd(omega.norm(),
                                           omega.norm() > 0 ? Vec3(omega.normalized())
                                                            : Vec3::UnitX())),
                t + tau);
  }

  // 6-vector [rotation; translation] of this pose's deviation from identity.
  Vec6 log() const {
    Vec6 out;
    out.head<3>() = so3_log(rotation());
    out.tail<3>() = t;
    return out;
  }

  double rotation_angle_to(const Pose& other) const {
    return so3_log((q.conjugate() * other.q).toRotationMatrix()).norm();
  }

  double translation_distance_to(const Pose& other) const {
    return (t - other.t).norm();
  }
};

inline Pose operator*(const Pose& a, const Pose& b) { return a.compose(b); }

/// Angle in [0, pi] between two 3-vectors (need not be unit length).
double angle_between(const Vec3& a, const Vec3& b);

}  // namespace mcloc
