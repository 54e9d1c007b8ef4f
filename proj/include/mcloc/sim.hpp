#pragma once

#include <cstdint>
#include <vector>

#include "mcloc/fusion.hpp"
#include "mcloc/mapstore.hpp"
#include "mcloc/matcher.hpp"

namespace mcloc::sim {

struct SceneSpec {
  int point_count = 50000;
  Vec3 extent = Vec3(200.0, 200.0, 20.0);  // box [0, extent]
  double cell_size = 12.5;                 // map-frame grid pitch
  double coverage_factor = 1.5;            // frame coverage radius = factor * cell_size
  int max_obs_per_frame = 400;
  double descriptor_noise = 0.25;   // sigma_d
  double outlier_fraction = 0.3;    // fraction of rendered features that are outliers
  double bearing_noise_deg = 0.1;   // sigma_b
  int descriptor_dim = 128;
  int max_features_per_camera = 120;
  double min_range = 1.0;
  double max_range = 40.0;
  std::uint64_t seed = 1;
};

/// Synthetic world: points with unit template descriptors plus per-grid-cell
/// map frames. Every point is observed by its own cell's frame; frames
/// additionally observe a capped random subset of points within their
/// coverage radius, so covisibility follows spatial proximity.
struct Scene {
  SceneSpec spec;
  std::vector<Vec3> points;
  DescMatrix templates;  // point_count x D
  std::vector<std::uint64_t> frame_ids;                 // sorted
  std::vector<std::vector<std::uint32_t>> frame_points; // parallel to frame_ids, sorted

  std::uint64_t cell_frame_of(const Vec3& p) const;
  Vec3 frame_center(std::uint64_t frame_id) const;
};

Scene generate_scene(const SceneSpec& spec);

/// Observation descriptor of (point, frame): template plus unit-scaled
/// Gaussian noise, renormalized. Deterministic in (scene seed, frame, point).
Eigen::VectorXf observation_descriptor(const Scene& scene, std::uint64_t frame_id,
                                       std::uint32_t point_index);

struct SceneMapOptions {
  int word_count = 1024;
  std::uint64_t vocab_seed = 7;
  int vocab_training_cap = 25000;
  bool use_pq = false;
  int pq_m = 8;
  int pq_k = 256;
  kernels::Exec exec = kernels::Exec::Parallel;
};

GlobalMap build_scene_map(const Scene& scene, const SceneMapOptions& opts);

/// 4 cameras at 90 degree yaw spacing, displaced 0.5 m outward from the rig
/// center, camera z forward.
CameraRig make_default_rig(int n_cameras = 4, double fov_half_angle_deg = 50.0,
                           double lever_arm = 0.5);

struct TimedPose {
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;
  Pose pose;
};

struct TrajectorySpec {
  enum class Shape { Circle, Line };
  Shape shape = Shape::Circle;
  int steps = 200;
  double step_length = 1.0;
  double dt = 0.1;
  double height = 1.5;
};

std::vector<TimedPose> make_trajectory(const TrajectorySpec& spec, const Vec3& extent);

struct RenderedFrame {
  QueryFrame frame;
  std::vector<std::int64_t> labels;  // descriptor row -> generating point index, -1 for outliers
};

RenderedFrame render_frame(const Scene& scene, const CameraRig& rig, const Pose& pose,
                           std::uint64_t frame_id, double timestamp);

struct OdometrySpec {
  double drift_per_meter = 0.0;     // translation scale bias
  double rot_noise_rad = 0.0;       // per-step, per-axis
  double trans_noise_m = 0.0;       // per-step, per-axis
  std::uint64_t seed = 1;
};

std::vector<OdometryIncrement> simulate_odometry(const std::vector<TimedPose>& trajectory,
                                                 const OdometrySpec& spec);

struct ThresholdClass {
  double heading_deg;
  double position_m;
};

std::vector<ThresholdClass> default_threshold_classes();

struct EvaluatedPose {
  std::uint64_t frame_id = 0;
  bool localized = false;
  Pose pose;
};

struct ErrorTable {
  std::vector<ThresholdClass> classes;
  std::vector<double> percentages;  // % of frames within both bounds, per class
  std::size_t total_frames = 0;
  std::size_t localized_frames = 0;
};

/// Percentage of frames localized and within each (heading, position) class.
/// Unlocalized frames count as failures everywhere. `planar` restricts the
/// position error to the ground plane.
ErrorTable evaluate(const std::vector<EvaluatedPose>& results,
                    const std::vector<TimedPose>& ground_truth,
                    const std::vector<ThresholdClass>& classes, bool planar = false);

/// RMS position error between timestamp-associated estimated and true poses.
double ate_rms(const std::vector<std::pair<double, Pose>>& estimated,
               const std::vector<TimedPose>& ground_truth, double time_tol = 1e-6);

}  // namespace mcloc::sim
