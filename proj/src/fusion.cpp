#include "mcloc/fusion.hpp"

#include <algorithm>

#include <Eigen/Dense>

namespace mcloc {

Vec6 relative_residual(const Pose& T, const Pose& T_next, const Pose& delta) {
  const Pose err = T_next.inverse().compose(T).compose(delta);
  Vec6 r;
  r.head<3>() = so3_log(err.rotation());
  r.tail<3>() = err.t;
  return r;
}

Vec2 match_residual(const Pose& T, const CameraRig& rig, int camera_id, const Vec3& bearing,
                    const Vec3& point) {
  const RigCamera& cam = rig.camera(camera_id);
  const Vec3 v = cam.rig_from_camera.rotation().transpose() *
                 (T.rotation().transpose() * (point - T.t) - cam.rig_from_camera.t);
  if (v.norm() <= 1e-12) throw DegenerateError("point coincides with camera center");
  return bearing_tangent_residual(bearing, v);
}

FusionWindow::FusionWindow(CameraRig rig, FusionConfig cfg)
    : rig_(std::move(rig)), cfg_(std::move(cfg)) {
  if (cfg_.window_size < 2) throw std::invalid_argument("window size must be >= 2");
  if (Eigen::LLT<Eigen::Matrix2d>(cfg_.sigma1).info() != Eigen::Success)
    throw std::invalid_argument("sigma1 must be symmetric positive definite");
}

OptimizeReport FusionWindow::add_localization(PoseNode node) {
  if (!nodes_.empty() && node.timestamp <= nodes_.back().timestamp)
    throw std::invalid_argument("node timestamps must be strictly increasing");
  nodes_.push_back(std::move(node));

  if (static_cast<int>(nodes_.size()) > cfg_.window_size) {
    const std::int64_t dropped = nodes_.front().node_id;
    nodes_.erase(nodes_.begin());
    std::erase_if(rels_, [&](const RelativeConstraint& c) {
      return c.from_node == dropped || c.to_node == dropped;
    });
  }
  if (cfg_.optimize_on_add) return optimize();
  return {};
}

void FusionWindow::add_odometry(const RelativeConstraint& constraint) {
  std::ptrdiff_t i_from = -1, i_to = -1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].node_id == constraint.from_node) i_from = static_cast<std::ptrdiff_t>(i);
    if (nodes_[i].node_id == constraint.to_node) i_to = static_cast<std::ptrdiff_t>(i);
  }
  if (i_from < 0 || i_to < 0 || i_to != i_from + 1)
    throw std::invalid_argument("odometry constraints must link consecutive nodes");
  for (const auto& c : rels_)
    if (c.from_node == constraint.from_node && c.to_node == constraint.to_node)
      throw std::invalid_argument("duplicate odometry constraint for node pair");
  if (Eigen::LLT<Mat6>(constraint.sigma0).info() != Eigen::Success)
    throw std::invalid_argument("sigma0 must be symmetric positive definite");
  rels_.push_back(constraint);
}

void FusionWindow::evaluate_system(Eigen::VectorXd* residuals,
                                   Eigen::MatrixXd* jacobian) const {
  const std::size_t n = nodes_.size();
  const std::size_t n_free = n > 0 ? n - 1 : 0;

  std::size_t rows = 0;
  for (const auto& c : rels_) {
    (void)c;
    rows += 6;
  }
  for (const auto& node : nodes_) rows += 2 * node.matches.size();

  residuals->setZero(rows);
  if (jacobian) jacobian->setZero(rows, 6 * n_free);

  const Eigen::LLT<Eigen::Matrix2d> llt1(cfg_.sigma1);
  const Eigen::Matrix2d L1 = llt1.matrixL();

  auto node_index = [&](std::int64_t id) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < n; ++i)
      if (nodes_[i].node_id == id) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };

  std::size_t row = 0;
  for (const auto& c : rels_) {
    const std::ptrdiff_t j = node_index(c.from_node);
    const std::ptrdiff_t jn = node_index(c.to_node);
    const Pose& Tj = nodes_[j].pose;
    const Pose& Tn = nodes_[jn].pose;

    const Vec6 r = relative_residual(Tj, Tn, c.delta);
    const Eigen::LLT<Mat6> llt0(c.sigma0);
    const Mat6 L0 = llt0.matrixL();

    residuals->segment<6>(row) = L0.triangularView<Eigen::Lower>().solve(r);

    if (jacobian) {
      const Vec3 r_rot = r.head<3>();
      const Mat3 R_delta = c.delta.rotation();
      const Mat3 Rn_T = Tn.rotation().transpose();
      const Vec3 t_err = r.tail<3>();

      if (j > 0) {
        Eigen::Matrix<double, 6, 6> J = Eigen::Matrix<double, 6, 6>::Zero();
        J.block<3, 3>(0, 0) = so3_right_jacobian_inv(r_rot) * R_delta.transpose();
        J.block<3, 3>(3, 0) = -Rn_T * Tj.rotation() * skew(c.delta.t);
        J.block<3, 3>(3, 3) = Rn_T;
        jacobian->block<6, 6>(row, 6 * (j - 1)) =
            L0.triangularView<Eigen::Lower>().solve(J);
      }
      if (jn > 0) {
        Eigen::Matrix<double, 6, 6> J = Eigen::Matrix<double, 6, 6>::Zero();
        J.block<3, 3>(0, 0) = -so3_left_jacobian_inv(r_rot);
        J.block<3, 3>(3, 0) = skew(t_err);
        J.block<3, 3>(3, 3) = -Rn_T;
        jacobian->block<6, 6>(row, 6 * (jn - 1)) =
            L0.triangularView<Eigen::Lower>().solve(J);
      }
    }
    row += 6;
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (const MatchConstraint& mc : nodes_[i].matches) {
      if (jacobian && i > 0) {
        const BearingResidual br = bearing_residual_with_jacobian(
            nodes_[i].pose, rig_, mc.camera_id, mc.bearing, mc.point);
        residuals->segment<2>(row) = L1.triangularView<Eigen::Lower>().solve(br.value);
        jacobian->block<2, 6>(row, 6 * (i - 1)) =
            L1.triangularView<Eigen::Lower>().solve(br.jacobian);
      } else {
        const Vec2 r = match_residual(nodes_[i].pose, rig_, mc.camera_id, mc.bearing, mc.point);
        residuals->segment<2>(row) = L1.triangularView<Eigen::Lower>().solve(r);
      }
      row += 2;
    }
  }
}

double FusionWindow::total_cost() const {
  Eigen::VectorXd r;
  evaluate_system(&r, nullptr);
  return r.squaredNorm();
}

OptimizeReport FusionWindow::optimize() {
  OptimizeReport report;
  report.initial_cost = total_cost();
  report.final_cost = report.initial_cost;
  if (nodes_.size() < 2) return report;

  std::vector<Pose> backup;
  for (const auto& node : nodes_) backup.push_back(node.pose);

  double lambda = 1e-6;
  double cost = report.initial_cost;

  for (int iter = 0; iter < cfg_.max_iterations; ++iter) {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    evaluate_system(&r, &J);

    const Eigen::MatrixXd H = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    if (!H.allFinite() || !g.allFinite()) {
      for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].pose = backup[i];
      report.ok = false;
      report.final_cost = report.initial_cost;
      report.message = "non-finite normal equations";
      return report;
    }
    if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;

    bool stepped = false;
    for (int attempt = 0; attempt < 10 && !stepped; ++attempt) {
      Eigen::MatrixXd damped = H;
      damped.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() != Eigen::Success || ldlt.isNegative()) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].pose = backup[i];
        report.ok = false;
        report.final_cost = report.initial_cost;
        report.message = "indefinite normal equations";
        return report;
      }
      const Eigen::VectorXd delta = ldlt.solve(-g);
      if (!delta.allFinite()) {
        lambda *= 4.0;
        continue;
      }

      std::vector<Pose> trial = {nodes_[0].pose};
      for (std::size_t i = 1; i < nodes_.size(); ++i)
        trial.push_back(nodes_[i].pose.retract(delta.segment<3>(6 * (i - 1)),
                                               delta.segment<3>(6 * (i - 1) + 3)));
      std::vector<Pose> saved;
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        saved.push_back(nodes_[i].pose);
        nodes_[i].pose = trial[i];
      }
      const double new_cost = total_cost();
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        cost = new_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        report.iterations = iter + 1;
        stepped = true;
        if (decrease < cfg_.cost_tolerance) iter = cfg_.max_iterations;
      } else {
        for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].pose = saved[i];
        lambda *= 4.0;
      }
    }
    if (!stepped) break;
  }

  report.final_cost = cost;
  return report;
}

void OdometryBuffer::push(const OdometryIncrement& inc) {
  if (inc.t_to <= inc.t_from)
    throw std::invalid_argument("odometry increment must advance time");
  const auto it = std::upper_bound(
      incs_.begin(), incs_.end(), inc,
      [](const OdometryIncrement& a, const OdometryIncrement& b) { return a.t_from < b.t_from; });
  incs_.insert(it, inc);
}

void OdometryBuffer::prune_before(double timestamp) {
  std::erase_if(incs_, [&](const OdometryIncrement& i) { return i.t_to < timestamp; });
}

Pose query_pose(const FusionWindow& window, const OdometryBuffer& buffer, double timestamp) {
  if (window.size() == 0) throw std::out_of_range("no pose nodes in the window");
  const PoseNode& newest = window.newest();
  if (timestamp < newest.timestamp - 1e-9)
    throw std::out_of_range("query timestamp precedes the newest pose node");

  Pose pose = newest.pose;
  double t = newest.timestamp;
  for (const OdometryIncrement& inc : buffer.increments()) {
    if (inc.t_from < t - 1e-9) continue;
    if (inc.t_from > t + 1e-9) break;  // gap in the chain
    if (inc.t_to > timestamp + 1e-9) break;
    pose = pose.compose(inc.delta);
    t = inc.t_to;
  }
  return pose;
}

}  // namespace mcloc
