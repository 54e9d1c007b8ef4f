#include "mcloc/pose.hpp"

#include <cmath>

namespace mcloc {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  double a, b;
  if (theta < 1e-6) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const double tr = R.trace();
  Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double cos_theta = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta < 1e-7) {
    return 0.5 * w;  // first-order
  }
  if (theta > M_PI - 1e-5) {
    // Near pi the antisymmetric part degenerates; recover the axis from the
    // symmetric part R + I whose largest-diagonal column is parallel to it.
    Mat3 S = R + Mat3::Identity();
    int k;
    S.diagonal().maxCoeff(&k);
    Vec3 axis = S.col(k).normalized();
    // Fix the sign using the antisymmetric part where possible.
    if (w.dot(axis) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * w;
}

Mat3 so3_right_jacobian_inv(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(phi);
  double c;
  if (theta < 1e-5) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    c = (1.0 / theta2) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() + 0.5 * W + c * W * W;
}

Mat3 so3_left_jacobian_inv(const Vec3& phi) {
  return so3_right_jacobian_inv(phi).transpose();
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace mcloc
