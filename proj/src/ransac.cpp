#include "mcloc/ransac.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace mcloc {

namespace {

const BearingFeature& feature_of(const QueryFrame& frame, const Correspondence& c) {
  for (const auto& cam : frame.cameras)
    if (cam.camera_id == c.camera_id) return cam.features[c.feature_index];
  throw std::out_of_range("correspondence references unknown camera");
}

bool strictly_better(const Hypothesis& a, const Hypothesis& b) {
  return a.inlier_count != b.inlier_count ? a.inlier_count > b.inlier_count
                                          : a.inlier_ratio > b.inlier_ratio;
}

}  // namespace

Hypothesis evaluate_hypothesis(const Pose& pose, const std::vector<Correspondence>& matches,
                               const QueryFrame& frame, const GlobalMap& map,
                               const CameraRig& rig, const AcceptanceThresholds& thresholds) {
  Hypothesis h;
  h.pose = pose;
  h.inlier_flags.assign(matches.size(), 0);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Correspondence& m = matches[i];
    double err;
    try {
      err = angular_error(pose, rig, m.camera_id, feature_of(frame, m).bearing,
                          map.point(m.point_index).position);
    } catch (const DegenerateError&) {
      continue;  // point on the camera center cannot be an inlier
    }
    if (err < thresholds.inlier_angle) {
      h.inlier_flags[i] = 1;
      ++h.inlier_count;
    }
  }
  h.inlier_ratio =
      matches.empty() ? 0.0 : static_cast<double>(h.inlier_count) / matches.size();
  return h;
}

bool check_acceptance(const Hypothesis& h, const std::vector<Correspondence>& matches,
                      const AcceptanceThresholds& thresholds, int n_cameras) {
  if (h.inlier_ratio < thresholds.min_inlier_ratio) return false;
  if (h.inlier_count < thresholds.min_inliers) return false;
  std::vector<int> cams;
  for (std::size_t i = 0; i < matches.size() && i < h.inlier_flags.size(); ++i)
    if (h.inlier_flags[i]) cams.push_back(matches[i].camera_id);
  std::sort(cams.begin(), cams.end());
  cams.erase(std::unique(cams.begin(), cams.end()), cams.end());
  return 2 * static_cast<int>(cams.size()) > n_cameras;
}

IterativeEstimator::IterativeEstimator(const QueryFrame& frame, const GlobalMap& map,
                                       const CameraRig& rig, const RansacConfig& cfg)
    : frame_(frame), map_(map), rig_(rig), cfg_(cfg), rng_(cfg.seed) {}

void IterativeEstimator::append_matches(const std::vector<Correspondence>& batch) {
  batch_starts_.push_back(matches_.size());
  matches_.insert(matches_.end(), batch.begin(), batch.end());
  first_sample_counts_.resize(matches_.size(), 0);
}

RayPoint IterativeEstimator::ray_point(const Correspondence& c) const {
  const RigCamera& cam = rig_.camera(c.camera_id);
  RayPoint rp;
  rp.origin = cam.rig_from_camera.t;
  rp.direction = cam.rig_from_camera.q * feature_of(frame_, c).bearing;
  rp.point = map_.point(c.point_index).position;
  return rp;
}

std::optional<std::array<std::size_t, 3>> IterativeEstimator::sample_minimal() {
  const std::size_t n = matches_.size();
  if (n < 3) return std::nullopt;

  // Recent window: matches delivered in the last k batches.
  std::size_t recent_begin = 0;
  if (!batch_starts_.empty()) {
    const std::size_t k = std::min<std::size_t>(cfg_.recent_batch_window, batch_starts_.size());
    recent_begin = batch_starts_[batch_starts_.size() - k];
  }
  bool recent_mode = recent_begin < n;
  if (recent_mode) {
    int min_count = first_sample_counts_[recent_begin];
    for (std::size_t i = recent_begin; i < n; ++i)
      min_count = std::min(min_count, first_sample_counts_[i]);
    if (min_count >= cfg_.first_sample_exhaustion) recent_mode = false;
  }

  for (int attempt = 0; attempt < cfg_.covis_attempts; ++attempt) {
    const std::size_t lo = recent_mode ? recent_begin : 0;
    std::uniform_int_distribution<std::size_t> pick(lo, n - 1);
    const std::size_t first = pick(rng_);
    ++first_sample_counts_[first];

    std::vector<std::size_t> covis;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == first) continue;
      if (matches_[j].point_index == matches_[first].point_index) continue;
      if (map_.frames_intersect(matches_[first].point_index, matches_[j].point_index))
        covis.push_back(j);
    }
    if (covis.size() < 2) continue;

    std::uniform_int_distribution<std::size_t> pa(0, covis.size() - 1);
    const std::size_t a = covis[pa(rng_)];
    std::size_t b = a;
    for (int tries = 0; tries < 10; ++tries) {
      const std::size_t cand = covis[pa(rng_)];
      if (cand != a && matches_[cand].point_index != matches_[a].point_index) {
        b = cand;
        break;
      }
    }
    if (b == a) continue;
    return std::array<std::size_t, 3>{first, a, b};
  }
  return std::nullopt;
}

bool IterativeEstimator::consider_candidate(const Pose& pose) {
  Hypothesis h = evaluate_hypothesis(pose, matches_, frame_, map_, rig_, cfg_.thresholds);

  bool replaced = false;
  for (Hypothesis& existing : pool_) {
    if (existing.pose.translation_distance_to(pose) < 1e-6 &&
        existing.pose.rotation_angle_to(pose) < 1e-8) {
      if (strictly_better(h, existing)) existing = h;
      replaced = true;
      break;
    }
  }
  if (!replaced) pool_.push_back(h);
  std::stable_sort(pool_.begin(), pool_.end(), strictly_better);
  if (static_cast<int>(pool_.size()) > cfg_.pool_size) pool_.resize(cfg_.pool_size);

  if (check_acceptance(h, matches_, cfg_.thresholds, static_cast<int>(rig_.size()))) {
    accepted_ = h;
    return true;
  }
  return false;
}

void IterativeEstimator::rescore_pool() {
  for (Hypothesis& h : pool_)
    h = evaluate_hypothesis(h.pose, matches_, frame_, map_, rig_, cfg_.thresholds);
  std::stable_sort(pool_.begin(), pool_.end(), strictly_better);
}

bool IterativeEstimator::ingest_batch(const std::vector<Correspondence>& batch) {
  if (accepted_) return true;
  append_matches(batch);

  // Check the pooled hypotheses against the enlarged match set first; a pool
  // hit costs no sampling at all.
  rescore_pool();
  if (!pool_.empty() &&
      check_acceptance(pool_.front(), matches_, cfg_.thresholds,
                       static_cast<int>(rig_.size()))) {
    accepted_ = pool_.front();
    return true;
  }

  for (int it = 0; it < cfg_.per_batch_budget; ++it) {
    ++iterations_;
    const auto sample = sample_minimal();
    if (!sample) break;

    std::array<RayPoint, 3> rays;
    for (int i = 0; i < 3; ++i) rays[i] = ray_point(matches_[(*sample)[i]]);

    std::vector<Pose> poses;
    try {
      poses = gp3p_solve(rays);
    } catch (const DegenerateError&) {
      continue;
    }
    if (poses.empty()) continue;

    // Only the best pose of this minimal sample enters the pool.
    std::optional<Hypothesis> best;
    std::optional<Pose> best_pose;
    for (const Pose& p : poses) {
      Hypothesis h = evaluate_hypothesis(p, matches_, frame_, map_, rig_, cfg_.thresholds);
      if (!best || strictly_better(h, *best)) {
        best = h;
        best_pose = p;
      }
    }
    if (best_pose && consider_candidate(*best_pose)) return true;
  }
  return false;
}

namespace {

class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(std::vector<Correspondence>&& batch) {
    std::unique_lock<std::mutex> lk(m_);
    cv_space_.wait(lk, [&] { return q_.size() < capacity_ || closed_; });
    if (closed_) return;
    q_.push_back(std::move(batch));
    cv_data_.notify_one();
  }

  bool pop(std::vector<Correspondence>& out) {
    std::unique_lock<std::mutex> lk(m_);
    cv_data_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return false;
    out = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return true;
  }

  void close() {
    std::lock_guard<std::mutex> lk(m_);
    closed_ = true;
    cv_data_.notify_all();
    cv_space_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_data_, cv_space_;
  std::deque<std::vector<Correspondence>> q_;
  std::size_t capacity_;
  bool closed_ = false;
};

}  // namespace

LocalizationResult localize(const QueryFrame& frame, const GlobalMap& map,
                            const CameraRig& rig, const std::optional<PosePrior>& prior,
                            const LocalizeConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  LocalizationResult result;
  result.frame_id = frame.frame_id;
  result.timestamp = frame.timestamp;
  result.stats.per_camera_matches.assign(frame.cameras.size(), 0);

  if (frame.feature_count() == 0) return result;

  std::optional<PriorGate> gate;
  if (prior) gate.emplace(*prior, cfg.filter, rig);

  IterativeEstimator estimator(frame, map, rig, cfg.ransac);
  std::atomic<bool> stop{false};
  MatchStats mstats;

  if (cfg.deterministic) {
    const BatchSink sink = [&](std::vector<Correspondence>&& batch) {
      if (estimator.ingest_batch(batch)) stop.store(true, std::memory_order_relaxed);
    };
    mstats = run_matching(frame, map, gate ? &*gate : nullptr, cfg.matcher, sink, stop);
  } else {
    BatchQueue queue(cfg.queue_capacity);
    std::thread producer([&] {
      const BatchSink sink = [&](std::vector<Correspondence>&& batch) {
        queue.push(std::move(batch));
      };
      mstats = run_matching(frame, map, gate ? &*gate : nullptr, cfg.matcher, sink, stop);
      queue.close();
    });
    std::vector<Correspondence> batch;
    while (queue.pop(batch)) {
      if (stop.load(std::memory_order_relaxed)) continue;  // drain after acceptance
      if (estimator.ingest_batch(batch)) stop.store(true, std::memory_order_relaxed);
    }
    producer.join();
  }

  result.stats.features_total = mstats.features_total;
  result.stats.features_processed = mstats.features_processed;
  result.stats.descriptor_comparisons = mstats.descriptor_comparisons;
  result.stats.candidate_comparisons = mstats.candidate_comparisons;
  result.stats.batches = mstats.batches_delivered;
  result.stats.matches_found = estimator.matches().size();
  result.stats.ransac_iterations = estimator.iterations();
  result.stats.per_camera_matches = mstats.per_camera_matches;

  if (estimator.accepted()) {
    const Hypothesis& h = estimator.accepted_hypothesis();
    const auto& ms = estimator.matches();
    std::vector<PoseObservation> obs;
    for (std::size_t i = 0; i < ms.size() && i < h.inlier_flags.size(); ++i) {
      if (!h.inlier_flags[i]) continue;
      result.inliers.push_back(ms[i]);
      PoseObservation o;
      o.camera_id = ms[i].camera_id;
      o.bearing = feature_of(frame, ms[i]).bearing;
      o.point = map.point(ms[i].point_index).position;
      obs.push_back(o);
    }
    const RefineResult rr =
        refine_pose(h.pose, obs, rig, cfg.ransac.thresholds.inlier_angle, cfg.refine);
    result.pose = rr.refined ? rr.pose : h.pose;
    result.status = LocalizationStatus::Localized;
  }

  result.stats.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mcloc
