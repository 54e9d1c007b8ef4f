#pragma once

#include <optional>
#include <random>

#include "mcloc/matcher.hpp"
#include "mcloc/solvers.hpp"

namespace mcloc {

struct AcceptanceThresholds {
  double min_inlier_ratio = 0.20;
  int min_inliers = 15;
  double inlier_angle = 10.0 * M_PI / 180.0;
  // Camera spread rule: inliers must cover strictly more than half of the
  // rig's cameras; enforced by check_acceptance.
};

struct Hypothesis {
  Pose pose;
  std::vector<char> inlier_flags;
  int inlier_count = 0;
  double inlier_ratio = 0.0;
};

struct RansacConfig {
  AcceptanceThresholds thresholds;
  int pool_size = 5;
  int per_batch_budget = 100;   // sampling iterations per ingested batch
  int recent_batch_window = 2;  // "recent" = matches from the last k batches
  int first_sample_exhaustion = 3;
  int covis_attempts = 50;
  std::uint64_t seed = 1;
};

/// Inlier flags/count/ratio of `pose` over the current matches.
Hypothesis evaluate_hypothesis(const Pose& pose, const std::vector<Correspondence>& matches,
                               const QueryFrame& frame, const GlobalMap& map,
                               const CameraRig& rig, const AcceptanceThresholds& thresholds);

/// Paper acceptance rule: ratio >= min, count >= min, and the inliers span
/// strictly more than half the rig cameras.
bool check_acceptance(const Hypothesis& h, const std::vector<Correspondence>& matches,
                      const AcceptanceThresholds& thresholds, int n_cameras);

/// Five-hypothesis iterative estimator consuming match batches.
class IterativeEstimator {
 public:
  IterativeEstimator(const QueryFrame& frame, const GlobalMap& map, const CameraRig& rig,
                     const RansacConfig& cfg);

  /// Ingests one batch: re-scores the pool against the enlarged match set,
  /// then samples minimal sets until accepted or the budget runs out.
  /// Returns true once an accepted hypothesis exists.
  bool ingest_batch(const std::vector<Correspondence>& batch);

  /// Recent-and-covisibility-guided minimal sample (indices into matches()).
  std::optional<std::array<std::size_t, 3>> sample_minimal();

  const std::vector<Correspondence>& matches() const { return matches_; }
  const std::vector<Hypothesis>& pool() const { return pool_; }
  bool accepted() const { return accepted_.has_value(); }
  const Hypothesis& accepted_hypothesis() const { return *accepted_; }
  std::uint64_t iterations() const { return iterations_; }

 private:
  void append_matches(const std::vector<Correspondence>& batch);
  void rescore_pool();
  bool consider_candidate(const Pose& pose);
  RayPoint ray_point(const Correspondence& c) const;

  const QueryFrame& frame_;
  const GlobalMap& map_;
  const CameraRig& rig_;
  RansacConfig cfg_;
  std::mt19937_64 rng_;

  std::vector<Correspondence> matches_;
  std::vector<std::size_t> batch_starts_;
  std::vector<int> first_sample_counts_;
  std::vector<Hypothesis> pool_;
  std::optional<Hypothesis> accepted_;
  std::uint64_t iterations_ = 0;
};

enum class LocalizationStatus { Localized, Failed };

struct LocalizationStats {
  std::uint64_t features_total = 0;
  std::uint64_t features_processed = 0;
  std::uint64_t matches_found = 0;
  std::uint64_t ransac_iterations = 0;
  std::uint64_t descriptor_comparisons = 0;
  std::uint64_t candidate_comparisons = 0;
  std::uint64_t batches = 0;
  double wall_time_ms = 0.0;
  std::vector<std::uint64_t> per_camera_matches;
};

struct LocalizationResult {
  LocalizationStatus status = LocalizationStatus::Failed;
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;
  Pose pose;
  std::vector<Correspondence> inliers;
  LocalizationStats stats;
};

struct LocalizeConfig {
  MatcherConfig matcher;
  RansacConfig ransac;
  RefineOptions refine;
  FilterConfig filter;
  bool deterministic = true;  // single-thread alternating pipeline
  std::size_t queue_capacity = 8;
};

/// Full single-frame pipeline: prioritized matching feeding the iterative
/// estimator (producer/consumer threads, or alternating on one thread in
/// deterministic mode), followed by robust refinement of the accepted pose.
LocalizationResult localize(const QueryFrame& frame, const GlobalMap& map,
                            const CameraRig& rig, const std::optional<PosePrior>& prior,
                            const LocalizeConfig& cfg);

}  // namespace mcloc
