#include "mcloc/prior.hpp"

#include <cmath>

namespace mcloc {

double expanded_cone_angle(double alpha, double theta) {
  if (alpha <= 0.0 || theta < 0.0 || alpha + 2.0 * theta >= M_PI / 2.0)
    throw std::domain_error("widened cone angle must stay below pi/2");
  return alpha + 2.0 * theta;
}

double distance_to_cone(const Vec3& apex, const Vec3& axis, double half_angle,
                        const Vec3& point) {
  const Vec3 rel = point - apex;
  const double h = rel.dot(axis);                    // axial coordinate
  const double rho = (rel - h * axis).norm();        // radial coordinate
  const double sin_b = std::sin(half_angle);
  const double cos_b = std::cos(half_angle);

  if (h >= 0.0 && rho * cos_b <= h * sin_b) return 0.0;  // inside the solid cone

  // Projection onto the boundary ray direction (cos b, sin b) in (h, rho).
  const double along = h * cos_b + rho * sin_b;
  if (along <= 0.0) return std::sqrt(h * h + rho * rho);  // apex nearest
  return rho * cos_b - h * sin_b;                         // lateral surface nearest
}

bool sphere_intersects_cone(const Vec3& apex, const Vec3& axis, double half_angle,
                            const Vec3& center, double radius) {
  if (half_angle <= 0.0 || half_angle >= M_PI / 2.0)
    throw std::domain_error("cone half-angle must lie in (0, pi/2)");
  if (radius < 0.0) throw std::domain_error("sphere radius must be nonnegative");
  return distance_to_cone(apex, axis.normalized(), half_angle, center) <= radius;
}

PriorGate::PriorGate(const PosePrior& prior, const FilterConfig& cfg, const CameraRig& rig) {
  if (prior.position_radius < 0.0 || prior.heading_half_angle < 0.0 ||
      prior.heading_half_angle >= M_PI / 2.0)
    throw std::domain_error("invalid pose prior bounds");
  half_angle_ = expanded_cone_angle(cfg.base_inlier_angle, prior.heading_half_angle);
  const double sin_theta = std::sin(prior.heading_half_angle);
  for (const RigCamera& c : rig.cameras()) {
    const Pose world_from_camera = prior.prior_pose.compose(c.rig_from_camera);
    PerCamera pc;
    pc.camera_id = c.camera_id;
    pc.apex = world_from_camera.t;
    pc.world_from_camera = world_from_camera.rotation();
    // Rotation uncertainty swings a displaced camera center by up to
    // |lever| * sin(theta) beyond the rig position radius.
    pc.radius = prior.position_radius + c.rig_from_camera.t.norm() * sin_theta;
    cams_.push_back(pc);
  }
}

const PriorGate::PerCamera& PriorGate::cam(int camera_id) const {
  for (const auto& c : cams_)
    if (c.camera_id == camera_id) return c;
  throw std::out_of_range("unknown camera_id in prior gate");
}

bool PriorGate::admits(int camera_id, const Vec3& bearing_cam, const Vec3& point) const {
  const PerCamera& c = cam(camera_id);
  const Vec3 axis = c.world_from_camera * bearing_cam;
  return distance_to_cone(c.apex, axis, half_angle_, point) <= c.radius;
}

std::vector<CandidatePoint> filter_candidates(const PosePrior& prior, const FilterConfig& cfg,
                                              const CameraRig& rig, int camera_id,
                                              const Vec3& bearing,
                                              const std::vector<CandidatePoint>& candidates) {
  const PriorGate gate(prior, cfg, rig);
  std::vector<CandidatePoint> kept;
  kept.reserve(candidates.size());
  for (const CandidatePoint& c : candidates)
    if (gate.admits(camera_id, bearing, c.position)) kept.push_back(c);
  return kept;
}

}  // namespace mcloc
