#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_set>
#include <vector>

#include "mcloc/mapstore.hpp"
#include "mcloc/prior.hpp"

namespace mcloc {

struct CameraFeatures {
  int camera_id = 0;
  std::vector<BearingFeature> features;
};

/// One query frame: per-camera bearing features plus one contiguous block of
/// descriptors addressed by BearingFeature::descriptor_id.
struct QueryFrame {
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;
  std::vector<CameraFeatures> cameras;
  DescMatrix descriptors;

  std::size_t feature_count() const {
    std::size_t n = 0;
    for (const auto& c : cameras) n += c.features.size();
    return n;
  }
};

enum class MatchOrigin { Forward, Expansion };

struct Correspondence {
  int camera_id = 0;
  int feature_index = 0;  // within the camera's feature list
  std::uint32_t point_index = 0;
  std::uint64_t point_id = 0;
  double distance = 0.0;
  MatchOrigin origin = MatchOrigin::Forward;
  double generating_distance = 0.0;  // forward distance that spawned an expansion
};

struct MatcherConfig {
  double ratio_forward = 0.9;
  double ratio_backward = 0.9;
  int batch_size = 20;
  // Expansion considers at most this many covisible neighbors, nearest in 3D
  // to the generating point. Each neighbor costs a whole-frame descriptor
  // scan, so this cap bounds the per-match expansion effort.
  int expansion_neighbor_cap = 10;
  double expansion_distance_factor = 2.0;
  bool balance_images = true;  // per-image cost factor on matched counts
};

struct MatchStats {
  std::uint64_t features_total = 0;
  std::uint64_t features_processed = 0;
  std::uint64_t descriptor_comparisons = 0;
  // Comparisons against word candidates only (the population the prior
  // filter prunes); backward and expansion scans run against image features.
  std::uint64_t candidate_comparisons = 0;
  std::uint64_t forward_matches = 0;
  std::uint64_t expansion_matches = 0;
  std::uint64_t batches_delivered = 0;
  std::vector<std::uint64_t> per_camera_matches;
};

/// Eq-style balancing cost: log(m+1)/log(6) + 1.
double image_cost_factor(std::uint64_t matched_count);

/// Matching order state: per-image feature queues sorted by word candidate
/// count, interleaved by the balancing cost times the head feature's count.
class PriorityState {
 public:
  PriorityState(const QueryFrame& frame, const GlobalMap& map, const PriorGate* gate,
                const MatcherConfig& cfg);

  struct Pick {
    int camera_slot;  // index into frame.cameras
    int feature_index;
  };
  std::optional<Pick> next_feature();

  void note_match(int camera_slot) { ++matched_[camera_slot]; }

  const std::vector<std::uint32_t>& candidates(int camera_slot, int feature_index) const;
  std::uint64_t matched_count(int camera_slot) const { return matched_[camera_slot]; }
  const std::vector<std::uint64_t>& matched_counts() const { return matched_; }

 private:
  struct FeatureOrder {
    std::uint32_t candidate_count;
    std::int32_t feature_index;
  };
  const MatcherConfig cfg_;
  std::vector<std::vector<FeatureOrder>> queue_;           // per camera slot, sorted
  std::vector<std::size_t> head_;                          // queue cursor
  std::vector<std::uint64_t> matched_;                     // m_I
  std::vector<int> camera_ids_;                            // slot -> camera_id
  std::vector<std::vector<std::vector<std::uint32_t>>> cand_;  // [slot][feature] -> entries
};

struct ForwardMatchResult {
  std::optional<Correspondence> match;
  std::uint64_t comparisons = 0;            // word scan + backward check
  std::uint64_t candidate_comparisons = 0;  // word scan only
};

/// Bi-directional ratio test of one feature against its word candidates:
/// forward within the word, backward against every feature of the frame.
ForwardMatchResult match_forward(const QueryFrame& frame, const GlobalMap& map,
                                 int camera_slot, int feature_index,
                                 const std::vector<std::uint32_t>& candidates,
                                 const MatcherConfig& cfg);

/// 3D->2D expansion: matches covisible neighbors of a forward match back to
/// the frame's features, keeping backward-ratio passes within twice the
/// generating distance. Does not deduplicate against earlier matches.
std::vector<Correspondence> expand_covisible(const Correspondence& match,
                                             const QueryFrame& frame, const GlobalMap& map,
                                             const PriorGate* gate, const MatcherConfig& cfg,
                                             std::uint64_t* comparisons);

using BatchSink = std::function<void(std::vector<Correspondence>&&)>;

/// Prioritized matching over the whole frame, delivering correspondences to
/// `sink` every `batch_size` processed features and when the queue drains.
/// Stops between features once `stop` is raised. Never delivers the same
/// (camera, feature, point) twice.
MatchStats run_matching(const QueryFrame& frame, const GlobalMap& map, const PriorGate* gate,
                        const MatcherConfig& cfg, const BatchSink& sink,
                        const std::atomic<bool>& stop);

}  // namespace mcloc
