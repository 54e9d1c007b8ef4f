#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcloc/fusion.hpp"
#include "mcloc/prior.hpp"
#include "mcloc/ransac.hpp"
#include "mcloc/sim.hpp"

namespace mcloc::io {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string base64_encode(const std::uint8_t* data, std::size_t n);
std::vector<std::uint8_t> base64_decode(const std::string& text);

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

/// Throws ConfigError when `j` contains a key outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context);

// rig file: {"cameras": [{camera_id, rig_from_camera: {q, t}, fov_half_angle_deg}]}
void save_rig(const CameraRig& rig, const std::string& path);
CameraRig load_rig(const std::string& path);

// query frames: JSON array of
// {frame_id, timestamp, cameras: [{camera_id, features: [{bearing, descriptor}]}]}
// with descriptors base64-encoded float32.
void save_query_frames(const std::vector<QueryFrame>& frames, const std::string& path);
std::vector<QueryFrame> load_query_frames(const std::string& path);

struct PriorRecord {
  std::uint64_t frame_id = 0;
  PosePrior prior;
};
void save_priors(const std::vector<PriorRecord>& priors, const std::string& path);
std::vector<PriorRecord> load_priors(const std::string& path);

// odometry: JSON lines {t_from, t_to, delta: {q, t}, sigma0_diag: [6]}
void save_odometry(const std::vector<OdometryIncrement>& incs, const std::string& path);
std::vector<OdometryIncrement> load_odometry(const std::string& path);

// results: JSON lines
// {frame_id, timestamp, status, pose, inliers: [{camera_id, feature, point_id}], stats}
void save_results(const std::vector<LocalizationResult>& results, const std::string& path,
                  bool zero_wall_times);
struct ResultRecord {
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;
  bool localized = false;
  Pose pose;
  struct Inlier {
    int camera_id;
    int feature;
    std::uint64_t point_id;
  };
  std::vector<Inlier> inliers;
  LocalizationStats stats;
};
std::vector<ResultRecord> load_results(const std::string& path);

// fused trajectory: JSON lines {timestamp, pose}
void save_trajectory(const std::vector<std::pair<double, Pose>>& traj, const std::string& path);
std::vector<std::pair<double, Pose>> load_trajectory(const std::string& path);

// ground truth: JSON array of {frame_id, timestamp, pose}
void save_ground_truth(const std::vector<sim::TimedPose>& poses, const std::string& path);
std::vector<sim::TimedPose> load_ground_truth(const std::string& path);

// map source for build-map: JSON array of
// {point_id, position, observations: [{frame_id, descriptor}]}
struct MapSourcePoint {
  std::uint64_t point_id = 0;
  Vec3 position = Vec3::Zero();
  struct Obs {
    std::uint64_t frame_id;
    Eigen::VectorXf descriptor;
  };
  std::vector<Obs> observations;
};
std::vector<MapSourcePoint> load_map_source(const std::string& path);
void save_map_source(const std::vector<MapSourcePoint>& points, const std::string& path);

}  // namespace mcloc::io
