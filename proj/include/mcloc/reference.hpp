#pragma once

#include "mcloc/ransac.hpp"

namespace mcloc {

/// Brute-force baseline: exhaustive bi-directional matching of every feature
/// followed by plain uniform-sampling RANSAC with a fixed iteration count.
/// Serves as the reference implementation the fast pipeline is validated
/// against, and as the descriptor-comparison yardstick.
struct ReferenceConfig {
  double ratio_forward = 0.9;
  double ratio_backward = 0.9;
  AcceptanceThresholds thresholds;
  int ransac_iterations = 10000;
  std::uint64_t seed = 1;
  RefineOptions refine;
};

struct ReferenceMatchResult {
  std::vector<Correspondence> matches;
  std::uint64_t descriptor_comparisons = 0;
  std::uint64_t candidate_comparisons = 0;
};

ReferenceMatchResult reference_match_all(const QueryFrame& frame, const GlobalMap& map,
                                         const ReferenceConfig& cfg);

LocalizationResult reference_localize(const QueryFrame& frame, const GlobalMap& map,
                                      const CameraRig& rig, const ReferenceConfig& cfg);

}  // namespace mcloc
