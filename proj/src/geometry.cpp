#include "mcloc/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace mcloc {

CameraRig::CameraRig(std::vector<RigCamera> cameras) : cameras_(std::move(cameras)) {
  if (cameras_.empty()) throw std::invalid_argument("rig needs at least one camera");
  for (std::size_t i = 0; i < cameras_.size(); ++i) {
    const auto& c = cameras_[i];
    if (c.fov_half_angle <= 0.0 || c.fov_half_angle >= M_PI)
      throw std::invalid_argument("fov_half_angle out of (0, pi)");
    for (std::size_t j = i + 1; j < cameras_.size(); ++j)
      if (cameras_[j].camera_id == c.camera_id)
        throw std::invalid_argument("duplicate camera_id in rig");
  }
}

const RigCamera& CameraRig::camera(int camera_id) const {
  for (const auto& c : cameras_)
    if (c.camera_id == camera_id) return c;
  throw std::out_of_range("unknown camera_id");
}

bool CameraRig::has_camera(int camera_id) const {
  for (const auto& c : cameras_)
    if (c.camera_id == camera_id) return true;
  return false;
}

double angular_error(const Pose& rig_pose, const CameraRig& rig, int camera_id,
                     const Vec3& bearing, const Vec3& point) {
  const Pose world_from_camera = rig_pose.compose(rig.camera(camera_id).rig_from_camera);
  const Vec3 dir = point - world_from_camera.t;
  if (dir.norm() <= 1e-12)
    throw DegenerateError("point coincides with camera center");
  const Vec3 bearing_world = world_from_camera.q * bearing;
  return angle_between(bearing_world, dir);
}

Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& u) {
  const Vec3 pick = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 b1 = u.cross(pick).normalized();
  const Vec3 b2 = u.cross(b1);
  Eigen::Matrix<double, 3, 2> B;
  B.col(0) = b1;
  B.col(1) = b2;
  return B;
}

namespace {

// theta/sin(theta) and its derivative wrt cos(theta), series-switching near 0.
struct SphereLogScale {
  double g;
  double dg_dc;
};

SphereLogScale sphere_log_scale(double c, double s) {
  SphereLogScale out;
  if (s < 1e-4) {
    if (c > 0.0) {
      const double theta = std::atan2(s, c);
      const double t2 = theta * theta;
      out.g = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0;
      out.dg_dc = -1.0 / 3.0 - t2 / 45.0;
    } else {
      // Antipodal neighborhood: norm stays pi but the direction degenerates.
      out.g = M_PI / std::max(s, 1e-12);
      out.dg_dc = 0.0;
    }
    return out;
  }
  const double theta = std::atan2(s, c);
  out.g = theta / s;
  out.dg_dc = (c * out.g - 1.0) / (s * s);
  return out;
}

}  // namespace

Vec2 bearing_tangent_residual(const Vec3& u, const Vec3& v) {
  const Vec3 vn = v.normalized();
  const auto B = tangent_basis(u);
  const Vec2 bv = B.transpose() * vn;
  const double c = std::clamp(u.dot(vn), -1.0, 1.0);
  const double s = bv.norm();
  if (s < 1e-12) {
    if (c > 0.0) return Vec2::Zero();
    return Vec2(M_PI, 0.0);  // antipodal; direction arbitrary
  }
  return sphere_log_scale(c, s).g * bv;
}

BearingResidual bearing_residual_with_jacobian(const Pose& T, const CameraRig& rig,
                                               int camera_id, const Vec3& bearing,
                                               const Vec3& point) {
  const RigCamera& cam = rig.camera(camera_id);
  const Mat3 R_rc = cam.rig_from_camera.rotation();
  const Mat3 R_j = T.rotation();

  const Vec3 a = R_j.transpose() * (point - T.t);  // point in rig frame
  const Vec3 v = R_rc.transpose() * (a - cam.rig_from_camera.t);
  const double vnorm = v.norm();
  if (vnorm <= 1e-12) throw DegenerateError("point coincides with camera center");
  const Vec3 vn = v / vnorm;

  const auto B = tangent_basis(bearing);
  const Vec2 bv = B.transpose() * vn;
  const double c = std::clamp(bearing.dot(vn), -1.0, 1.0);
  const double s = bv.norm();

  BearingResidual out;
  const auto scale = sphere_log_scale(c, std::max(s, 1e-12));
  if (s < 1e-12) {
    out.value = c > 0.0 ? Vec2::Zero() : Vec2(M_PI, 0.0);
  } else {
    out.value = scale.g * bv;
  }

  // d e / d vn = g * B^T + g'(c) * (B^T vn) * u^T
  Eigen::Matrix<double, 2, 3> de_dvn =
      scale.g * B.transpose() + scale.dg_dc * bv * bearing.transpose();
  // d vn / d v
  const Mat3 dvn_dv = (Mat3::Identity() - vn * vn.transpose()) / vnorm;
  const Eigen::Matrix<double, 2, 3> de_dv = de_dvn * dvn_dv;

  // d v / d omega (right increment on T's rotation) and d v / d tau.
  const Mat3 dv_domega = R_rc.transpose() * skew(a);
  const Mat3 dv_dtau = -(R_j * R_rc).transpose();

  out.jacobian.leftCols<3>() = de_dv * dv_domega;
  out.jacobian.rightCols<3>() = de_dv * dv_dtau;
  return out;
}

}  // namespace mcloc
