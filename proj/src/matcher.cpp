#include "mcloc/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mcloc {

double image_cost_factor(std::uint64_t matched_count) {
  return std::log(static_cast<double>(matched_count) + 1.0) / std::log(6.0) + 1.0;
}

PriorityState::PriorityState(const QueryFrame& frame, const GlobalMap& map,
                             const PriorGate* gate, const MatcherConfig& cfg)
    : cfg_(cfg) {
  const std::size_t slots = frame.cameras.size();
  queue_.resize(slots);
  head_.assign(slots, 0);
  matched_.assign(slots, 0);
  cand_.resize(slots);
  camera_ids_.resize(slots);

  for (std::size_t s = 0; s < slots; ++s) {
    const CameraFeatures& cam = frame.cameras[s];
    camera_ids_[s] = cam.camera_id;
    cand_[s].resize(cam.features.size());
    queue_[s].reserve(cam.features.size());
    for (std::size_t f = 0; f < cam.features.size(); ++f) {
      const BearingFeature& feat = cam.features[f];
      const std::uint32_t word =
          assign_word(map.vocabulary(), frame.descriptors.row(feat.descriptor_id).data());
      const auto& entries = map.word_entries(word);
      auto& kept = cand_[s][f];
      if (gate) {
        kept.reserve(entries.size());
        for (std::uint32_t e : entries)
          if (gate->admits(cam.camera_id, feat.bearing, map.point(map.entry_point(e)).position))
            kept.push_back(e);
      } else {
        kept = entries;
      }
      queue_[s].push_back({static_cast<std::uint32_t>(kept.size()), static_cast<std::int32_t>(f)});
    }
    std::sort(queue_[s].begin(), queue_[s].end(),
              [](const FeatureOrder& a, const FeatureOrder& b) {
                return a.candidate_count != b.candidate_count
                           ? a.candidate_count < b.candidate_count
                           : a.feature_index < b.feature_index;
              });
  }
}

std::optional<PriorityState::Pick> PriorityState::next_feature() {
  int best_slot = -1;
  double best_cost = 0.0;
  for (std::size_t s = 0; s < queue_.size(); ++s) {
    if (head_[s] >= queue_[s].size()) continue;
    const double factor = cfg_.balance_images ? image_cost_factor(matched_[s]) : 1.0;
    const double cost = factor * static_cast<double>(queue_[s][head_[s]].candidate_count);
    bool better = best_slot < 0 || cost < best_cost;
    if (!better && cost == best_cost) {
      // Tie: lowest camera_id, then lowest feature index.
      const auto& a = queue_[s][head_[s]];
      const auto& b = queue_[best_slot][head_[best_slot]];
      better = camera_ids_[s] != camera_ids_[best_slot]
                   ? camera_ids_[s] < camera_ids_[best_slot]
                   : a.feature_index < b.feature_index;
    }
    if (better) {
      best_slot = static_cast<int>(s);
      best_cost = cost;
    }
  }
  if (best_slot < 0) return std::nullopt;
  const FeatureOrder fo = queue_[best_slot][head_[best_slot]];
  ++head_[best_slot];
  return Pick{best_slot, fo.feature_index};
}

const std::vector<std::uint32_t>& PriorityState::candidates(int camera_slot,
                                                            int feature_index) const {
  return cand_[camera_slot][feature_index];
}

ForwardMatchResult match_forward(const QueryFrame& frame, const GlobalMap& map,
                                 int camera_slot, int feature_index,
                                 const std::vector<std::uint32_t>& candidates,
                                 const MatcherConfig& cfg) {
  ForwardMatchResult out;
  const double inf = std::numeric_limits<double>::infinity();
  const CameraFeatures& cam = frame.cameras[camera_slot];
  const BearingFeature& feat = cam.features[feature_index];
  const float* qdesc = frame.descriptors.row(feat.descriptor_id).data();

  std::int64_t best_entry = -1;
  double d1 = inf, d2 = inf;
  for (std::uint32_t e : candidates) {
    const double d = map.entry_distance(qdesc, e);
    ++out.comparisons;
    ++out.candidate_comparisons;
    if (d < d1) {
      d2 = d1;
      d1 = d;
      best_entry = e;
    } else if (d < d2) {
      d2 = d;
    }
  }
  if (best_entry < 0 || !(d2 == inf || d1 < cfg.ratio_forward * d2)) return out;

  // Backward check: the point's nearest feature across the whole frame must
  // be the generating one, and it must pass the ratio test as well.
  const Eigen::VectorXf pdesc = map.entry_descriptor(static_cast<std::uint32_t>(best_entry));
  const kernels::TwoNearest bn = kernels::two_nearest_all(pdesc.data(), frame.descriptors);
  out.comparisons += static_cast<std::uint64_t>(frame.descriptors.rows());
  const double b1 = std::sqrt(static_cast<double>(bn.best_sq_dist));
  const double b2 = bn.second >= 0 ? std::sqrt(static_cast<double>(bn.second_sq_dist)) : inf;
  if (bn.best != feat.descriptor_id || !(b2 == inf || b1 < cfg.ratio_backward * b2)) return out;

  Correspondence c;
  c.camera_id = cam.camera_id;
  c.feature_index = feature_index;
  c.point_index = map.entry_point(static_cast<std::uint32_t>(best_entry));
  c.point_id = map.point(c.point_index).point_id;
  c.distance = d1;
  c.origin = MatchOrigin::Forward;
  c.generating_distance = d1;
  out.match = c;
  return out;
}

std::vector<Correspondence> expand_covisible(const Correspondence& match,
                                             const QueryFrame& frame, const GlobalMap& map,
                                             const PriorGate* gate, const MatcherConfig& cfg,
                                             std::uint64_t* comparisons) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Correspondence> out;

  // descriptor row -> owning (slot, feature)
  std::vector<std::pair<int, int>> row_of(frame.descriptors.rows(), {-1, -1});
  for (std::size_t s = 0; s < frame.cameras.size(); ++s)
    for (std::size_t f = 0; f < frame.cameras[s].features.size(); ++f)
      row_of[frame.cameras[s].features[f].descriptor_id] = {static_cast<int>(s),
                                                            static_cast<int>(f)};

  std::vector<std::uint32_t> neigh = map.covisible_indices(match.point_index);
  const Vec3 gen_pos = map.point(match.point_index).position;
  if (static_cast<int>(neigh.size()) > cfg.expansion_neighbor_cap) {
    std::partial_sort(neigh.begin(), neigh.begin() + cfg.expansion_neighbor_cap, neigh.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                        const double da = (map.point(a).position - gen_pos).squaredNorm();
                        const double db = (map.point(b).position - gen_pos).squaredNorm();
                        return da != db ? da < db : a < b;
                      });
    neigh.resize(cfg.expansion_neighbor_cap);
  }

  for (std::uint32_t n : neigh) {
    const MapPoint& np = map.point(n);
    double e1 = inf, e2 = inf;  // e2 restricted to rows other than the best
    std::int32_t best_row = -1;
    for (std::uint32_t e = np.entry_begin; e < np.entry_begin + np.entry_count; ++e) {
      const Eigen::VectorXf ndesc = map.entry_descriptor(e);
      for (Eigen::Index row = 0; row < frame.descriptors.rows(); ++row) {
        if (gate) {
          const auto [rs, rf] = row_of[row];
          const BearingFeature& bf = frame.cameras[rs].features[rf];
          if (!gate->admits(frame.cameras[rs].camera_id, bf.bearing, np.position)) continue;
        }
        const double d = std::sqrt(static_cast<double>(kernels::sq_dist(
            ndesc.data(), frame.descriptors.row(row).data(), map.descriptor_dim())));
        if (comparisons) ++*comparisons;
        if (d < e1) {
          if (best_row != static_cast<std::int32_t>(row)) e2 = e1;
          e1 = d;
          best_row = static_cast<std::int32_t>(row);
        } else if (static_cast<std::int32_t>(row) != best_row && d < e2) {
          e2 = d;
        }
      }
    }
    if (best_row < 0) continue;
    if (!(e2 == inf || e1 < cfg.ratio_backward * e2)) continue;
    if (e1 > cfg.expansion_distance_factor * match.distance) continue;
    const auto [rs, rf] = row_of[best_row];
    Correspondence ex;
    ex.camera_id = frame.cameras[rs].camera_id;
    ex.feature_index = rf;
    ex.point_index = n;
    ex.point_id = np.point_id;
    ex.distance = e1;
    ex.origin = MatchOrigin::Expansion;
    ex.generating_distance = match.distance;
    out.push_back(ex);
  }
  return out;
}

namespace {

inline std::uint64_t dedup_key(int camera_id, int feature, std::uint32_t point_index) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(camera_id)) << 56) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(feature)) << 32) | point_index;
}

}  // namespace

MatchStats run_matching(const QueryFrame& frame, const GlobalMap& map, const PriorGate* gate,
                        const MatcherConfig& cfg, const BatchSink& sink,
                        const std::atomic<bool>& stop) {
  MatchStats stats;
  stats.features_total = frame.feature_count();
  stats.per_camera_matches.assign(frame.cameras.size(), 0);
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");

  PriorityState state(frame, map, gate, cfg);

  std::vector<int> slot_of_camera_id;
  for (std::size_t s = 0; s < frame.cameras.size(); ++s) {
    const int id = frame.cameras[s].camera_id;
    if (id >= static_cast<int>(slot_of_camera_id.size()))
      slot_of_camera_id.resize(id + 1, -1);
    slot_of_camera_id[id] = static_cast<int>(s);
  }

  std::unordered_set<std::uint64_t> seen;
  std::vector<Correspondence> batch;
  int processed_in_batch = 0;

  auto deliver = [&]() {
    sink(std::move(batch));
    batch = {};
    ++stats.batches_delivered;
  };

  auto emit = [&](const Correspondence& c) {
    if (!seen.insert(dedup_key(c.camera_id, c.feature_index, c.point_index)).second)
      return false;
    batch.push_back(c);
    const int slot = slot_of_camera_id[c.camera_id];
    state.note_match(slot);
    ++stats.per_camera_matches[slot];
    return true;
  };

  while (!stop.load(std::memory_order_relaxed)) {
    const auto pick = state.next_feature();
    if (!pick) break;
    ++stats.features_processed;
    ++processed_in_batch;

    const ForwardMatchResult fm =
        match_forward(frame, map, pick->camera_slot, pick->feature_index,
                      state.candidates(pick->camera_slot, pick->feature_index), cfg);
    stats.descriptor_comparisons += fm.comparisons;
    stats.candidate_comparisons += fm.candidate_comparisons;

    if (fm.match && emit(*fm.match)) {
      ++stats.forward_matches;
      for (const Correspondence& ex :
           expand_covisible(*fm.match, frame, map, gate, cfg, &stats.descriptor_comparisons))
        if (emit(ex)) ++stats.expansion_matches;
    }

    if (processed_in_batch == cfg.batch_size) {
      deliver();
      processed_in_batch = 0;
    }
  }

  if (!stop.load(std::memory_order_relaxed) && processed_in_batch > 0) deliver();
  return stats;
}

}  // namespace mcloc
