#include <cmath>

#include <Eigen/Dense>

#include "mcloc/solvers.hpp"

namespace mcloc {

namespace {

double cauchy_cost(double sq_norm, double scale) {
  const double s2 = scale * scale;
  return s2 * std::log1p(sq_norm / s2);
}

double cauchy_weight(double sq_norm, double scale) {
  return 1.0 / (1.0 + sq_norm / (scale * scale));
}

double total_cost(const Pose& pose, const std::vector<PoseObservation>& obs,
                  const CameraRig& rig, double scale) {
  double cost = 0.0;
  for (const auto& o : obs) {
    const RigCamera& cam = rig.camera(o.camera_id);
    const Vec3 v = cam.rig_from_camera.rotation().transpose() *
                   (pose.rotation().transpose() * (o.point - pose.t) -
                    cam.rig_from_camera.t);
    cost += cauchy_cost(bearing_tangent_residual(o.bearing, v).squaredNorm(), scale);
  }
  return cost;
}

}  // namespace

RefineResult refine_pose(const Pose& initial, const std::vector<PoseObservation>& obs,
                         const CameraRig& rig, double robust_threshold,
                         const RefineOptions& opts) {
  if (obs.size() < 4)
    throw std::invalid_argument("refine_pose needs at least 4 observations");
  if (robust_threshold <= 0.0)
    throw std::invalid_argument("robust threshold must be positive");

  RefineResult out;
  out.pose = initial;
  out.initial_cost = total_cost(initial, obs, rig, robust_threshold);
  out.final_cost = out.initial_cost;
  out.refined = true;

  double lambda = 1e-4;
  double cost = out.initial_cost;
  bool done = false;

  for (int iter = 0; iter < opts.max_iterations && !done; ++iter) {
    Mat6 H = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (const auto& o : obs) {
      const BearingResidual br =
          bearing_residual_with_jacobian(out.pose, rig, o.camera_id, o.bearing, o.point);
      const double w = cauchy_weight(br.value.squaredNorm(), robust_threshold);
      H += w * br.jacobian.transpose() * br.jacobian;
      g += w * br.jacobian.transpose() * br.value;
    }

    if (iter == 0) {
      const Eigen::LDLT<Mat6> probe(H);
      const Vec6 d = probe.vectorD();
      const bool deficient = !H.allFinite() || probe.info() != Eigen::Success ||
                             d.minCoeff() < 1e-12 * std::max(d.maxCoeff(), 1e-300);
      if (deficient && cost > 1e-18) {
        out.refined = false;
        out.pose = initial;
        return out;
      }
    }
    if (g.norm() < 1e-16) break;  // already stationary (e.g. exact fit)

    bool stepped = false;
    for (int attempt = 0; attempt < 10 && !stepped; ++attempt) {
      Mat6 damped = H;
      damped.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
      const Eigen::LDLT<Mat6> ldlt(damped);
      if (ldlt.info() != Eigen::Success) {
        lambda *= 4.0;
        continue;
      }
      const Vec6 delta = ldlt.solve(-g);
      if (!delta.allFinite()) {
        lambda *= 4.0;
        continue;
      }
      const Pose candidate = out.pose.retract(delta.head<3>(), delta.tail<3>());
      const double new_cost = total_cost(candidate, obs, rig, robust_threshold);
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        out.pose = candidate;
        out.iterations = iter + 1;
        cost = new_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        stepped = true;
        if (decrease < opts.min_cost_decrease) done = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!stepped) break;  // cannot improve further
  }

  out.final_cost = cost;
  return out;
}

}  // namespace mcloc
