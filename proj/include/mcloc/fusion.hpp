#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mcloc/geometry.hpp"

namespace mcloc {

struct MatchConstraint {
  int camera_id = 0;
  Vec3 bearing = Vec3::UnitZ();  // u_k, camera frame
  Vec3 point = Vec3::Zero();     // P_k, world
};

struct PoseNode {
  std::int64_t node_id = 0;
  double timestamp = 0.0;
  Pose pose;
  std::vector<MatchConstraint> matches;  // may be empty
};

/// Relative pose between consecutive nodes: to = from * delta.
struct RelativeConstraint {
  std::int64_t from_node = 0;
  std::int64_t to_node = 0;
  Pose delta;
  Mat6 sigma0 = Mat6::Identity();  // tangent covariance, rotation then translation
};

struct FusionConfig {
  int window_size = 8;  // N
  Eigen::Matrix2d sigma1 =
      Eigen::Matrix2d::Identity() * std::pow(0.3 * M_PI / 180.0, 2.0);
  int max_iterations = 50;
  double cost_tolerance = 1e-10;
  bool optimize_on_add = true;
};

/// [log(R_err); t_err] of T_next^-1 * T * delta; zero iff T_next = T * delta.
Vec6 relative_residual(const Pose& T, const Pose& T_next, const Pose& delta);

/// Tangent-plane deviation between the observed bearing and the direction to
/// the point under node pose T; norm equals the angular error.
Vec2 match_residual(const Pose& T, const CameraRig& rig, int camera_id, const Vec3& bearing,
                    const Vec3& point);

struct OptimizeReport {
  bool ok = true;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::string message;
};

/// Sliding-window factor graph over localization pose nodes with odometry
/// relative constraints. The oldest in-window node is held fixed as the
/// gauge anchor; sliding drops the oldest node and its constraints.
class FusionWindow {
 public:
  FusionWindow(CameraRig rig, FusionConfig cfg);

  /// Appends a node (strictly increasing timestamps), slides the window, and
  /// optimizes when configured to. Returns the optimize report (or a no-op
  /// report when optimization is disabled).
  OptimizeReport add_localization(PoseNode node);

  /// Relative constraint between two consecutive existing nodes.
  void add_odometry(const RelativeConstraint& constraint);

  OptimizeReport optimize();

  double total_cost() const;

  /// Whitened residual vector and its Jacobian wrt the free nodes (all but
  /// the oldest), in (omega, tau) blocks of 6 per node.
  void evaluate_system(Eigen::VectorXd* residuals, Eigen::MatrixXd* jacobian) const;

  std::size_t size() const { return nodes_.size(); }
  const std::vector<PoseNode>& nodes() const { return nodes_; }
  const PoseNode& newest() const { return nodes_.back(); }
  const std::vector<RelativeConstraint>& constraints() const { return rels_; }
  const CameraRig& rig() const { return rig_; }
  const FusionConfig& config() const { return cfg_; }

  void set_node_pose(std::size_t index, const Pose& pose) { nodes_[index].pose = pose; }

 private:
  CameraRig rig_;
  FusionConfig cfg_;
  std::vector<PoseNode> nodes_;
  std::vector<RelativeConstraint> rels_;
  Eigen::LLT<Mat6> whiten_rel(const Mat6& sigma) const;
};

struct OdometryIncrement {
  double t_from = 0.0;
  double t_to = 0.0;
  Pose delta;
  Vec6 sigma0_diag = Vec6::Ones();
};

/// High-rate odometry increments for frame-rate pose queries.
class OdometryBuffer {
 public:
  void push(const OdometryIncrement& inc);
  const std::vector<OdometryIncrement>& increments() const { return incs_; }
  void prune_before(double timestamp);

 private:
  std::vector<OdometryIncrement> incs_;  // sorted by t_from
};

/// Newest node pose composed with the odometry increments up to `timestamp`.
/// Throws std::out_of_range for timestamps before the newest node.
Pose query_pose(const FusionWindow& window, const OdometryBuffer& buffer, double timestamp);

}  // namespace mcloc
