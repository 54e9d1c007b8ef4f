#include "mcloc/reference.hpp"

#include <chrono>

#include "mcloc/random.hpp"

namespace mcloc {

ReferenceMatchResult reference_match_all(const QueryFrame& frame, const GlobalMap& map,
                                         const ReferenceConfig& cfg) {
  ReferenceMatchResult out;
  const double inf = std::numeric_limits<double>::infinity();

  for (std::size_t s = 0; s < frame.cameras.size(); ++s) {
    const CameraFeatures& cam = frame.cameras[s];
    for (std::size_t f = 0; f < cam.features.size(); ++f) {
      const BearingFeature& feat = cam.features[f];
      const float* qdesc = frame.descriptors.row(feat.descriptor_id).data();
      const std::uint32_t word = assign_word(map.vocabulary(), qdesc);

      std::int64_t best_entry = -1;
      double d1 = inf, d2 = inf;
      for (std::uint32_t e : map.word_entries(word)) {
        const double d = map.entry_distance(qdesc, e);
        ++out.descriptor_comparisons;
        ++out.candidate_comparisons;
        if (d < d1) {
          d2 = d1;
          d1 = d;
          best_entry = e;
        } else if (d < d2) {
          d2 = d;
        }
      }
      if (best_entry < 0 || !(d2 == inf || d1 < cfg.ratio_forward * d2)) continue;

      const Eigen::VectorXf pdesc = map.entry_descriptor(static_cast<std::uint32_t>(best_entry));
      const kernels::TwoNearest bn = kernels::two_nearest_all(pdesc.data(), frame.descriptors);
      out.descriptor_comparisons += static_cast<std::uint64_t>(frame.descriptors.rows());
      const double b1 = std::sqrt(static_cast<double>(bn.best_sq_dist));
      const double b2 =
          bn.second >= 0 ? std::sqrt(static_cast<double>(bn.second_sq_dist)) : inf;
      if (bn.best != feat.descriptor_id || !(b2 == inf || b1 < cfg.ratio_backward * b2))
        continue;

      Correspondence c;
      c.camera_id = cam.camera_id;
      c.feature_index = static_cast<int>(f);
      c.point_index = map.entry_point(static_cast<std::uint32_t>(best_entry));
      c.point_id = map.point(c.point_index).point_id;
      c.distance = d1;
      c.origin = MatchOrigin::Forward;
      c.generating_distance = d1;
      out.matches.push_back(c);
    }
  }
  return out;
}

LocalizationResult reference_localize(const QueryFrame& frame, const GlobalMap& map,
                                      const CameraRig& rig, const ReferenceConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  LocalizationResult result;
  result.frame_id = frame.frame_id;
  result.timestamp = frame.timestamp;
  result.stats.features_total = frame.feature_count();
  result.stats.per_camera_matches.assign(frame.cameras.size(), 0);
  if (frame.feature_count() == 0) return result;

  ReferenceMatchResult mr = reference_match_all(frame, map, cfg);
  result.stats.features_processed = result.stats.features_total;
  result.stats.descriptor_comparisons = mr.descriptor_comparisons;
  result.stats.candidate_comparisons = mr.candidate_comparisons;
  result.stats.matches_found = mr.matches.size();

  const auto& matches = mr.matches;
  std::optional<Hypothesis> best;
  if (matches.size() >= 3) {
    auto rig_ray = [&](const Correspondence& c) {
      const RigCamera& cam = rig.camera(c.camera_id);
      RayPoint rp;
      rp.origin = cam.rig_from_camera.t;
      for (const auto& cf : frame.cameras)
        if (cf.camera_id == c.camera_id)
          rp.direction = cam.rig_from_camera.q * cf.features[c.feature_index].bearing;
      rp.point = map.point(c.point_index).position;
      return rp;
    };

    auto rng = make_rng(cfg.seed, 0x726566ULL);
    std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
    for (int it = 0; it < cfg.ransac_iterations; ++it) {
      ++result.stats.ransac_iterations;
      std::array<std::size_t, 3> idx;
      idx[0] = pick(rng);
      idx[1] = pick(rng);
      idx[2] = pick(rng);
      if (idx[0] == idx[1] || idx[0] == idx[2] || idx[1] == idx[2]) continue;
      if (matches[idx[0]].point_index == matches[idx[1]].point_index ||
          matches[idx[0]].point_index == matches[idx[2]].point_index ||
          matches[idx[1]].point_index == matches[idx[2]].point_index)
        continue;

      std::array<RayPoint, 3> rays = {rig_ray(matches[idx[0]]), rig_ray(matches[idx[1]]),
                                      rig_ray(matches[idx[2]])};
      std::vector<Pose> poses;
      try {
        poses = gp3p_solve(rays);
      } catch (const DegenerateError&) {
        continue;
      }
      for (const Pose& p : poses) {
        // inlier counting with a bail-out once the best count is out of reach
        const int bound = best ? best->inlier_count : -1;
        int count = 0;
        const int n = static_cast<int>(matches.size());
        for (int m = 0; m < n; ++m) {
          if (count + (n - m) <= bound) break;
          try {
            const Correspondence& c = matches[m];
            for (const auto& cf : frame.cameras)
              if (cf.camera_id == c.camera_id &&
                  angular_error(p, rig, c.camera_id,
                                cf.features[c.feature_index].bearing,
                                map.point(c.point_index).position) <
                      cfg.thresholds.inlier_angle)
                ++count;
          } catch (const DegenerateError&) {
          }
        }
        if (count <= bound) continue;
        best = evaluate_hypothesis(p, matches, frame, map, rig, cfg.thresholds);
      }
    }
  }

  if (best && check_acceptance(*best, matches, cfg.thresholds, static_cast<int>(rig.size()))) {
    std::vector<PoseObservation> obs;
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (!best->inlier_flags[i]) continue;
      result.inliers.push_back(matches[i]);
      PoseObservation o;
      o.camera_id = matches[i].camera_id;
      for (const auto& cf : frame.cameras)
        if (cf.camera_id == matches[i].camera_id)
          o.bearing = cf.features[matches[i].feature_index].bearing;
      o.point = map.point(matches[i].point_index).position;
      obs.push_back(o);
    }
    const RefineResult rr =
        refine_pose(best->pose, obs, rig, cfg.thresholds.inlier_angle, cfg.refine);
    result.pose = rr.refined ? rr.pose : best->pose;
    result.status = LocalizationStatus::Localized;
  }

  result.stats.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mcloc
