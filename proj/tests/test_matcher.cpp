#include <doctest.h>
#include <map>
#include <set>
#include <tuple>

#include "support.hpp"

using namespace mcloc;

namespace {

// Hand-built world: 8-dim descriptors, vocabulary = 8 canonical unit words.
struct TinyWorld {
  Vocabulary vocab;
  MapBuilder builder{8};
  std::uint64_t next_point = 100;

  TinyWorld() {
    vocab.words = DescMatrix::Zero(8, 8);
    for (int i = 0; i < 8; ++i) vocab.words(i, i) = 1.0f;
  }

  static Eigen::VectorXf unit(int axis) {
    Eigen::VectorXf v = Eigen::VectorXf::Zero(8);
    v[axis] = 1.0f;
    return v;
  }

  // Unit vector at the given L2 distance from `base` (chord construction).
  static Eigen::VectorXf at_distance(const Eigen::VectorXf& base, int ortho_axis, double dist) {
    Eigen::VectorXf u = Eigen::VectorXf::Zero(8);
    u[ortho_axis] = 1.0f;
    u -= u.dot(base) * base;
    u.normalize();
    const double phi = 2.0 * std::asin(dist / 2.0);
    return (std::cos(phi) * base + std::sin(phi) * u).eval();
  }

  std::uint64_t add_point(std::uint32_t word, const Eigen::VectorXf& desc,
                          std::uint64_t frame_id, const Vec3& pos = Vec3(0, 0, 5)) {
    const std::uint64_t id = next_point++;
    builder.add_point(id, pos);
    builder.add_observation(id, word, desc.data(), frame_id);
    return id;
  }

  GlobalMap build() { return builder.build(vocab); }
};

QueryFrame make_frame(const std::vector<std::pair<int, Eigen::VectorXf>>& features) {
  QueryFrame f;
  f.frame_id = 7;
  std::map<int, CameraFeatures> cams;
  f.descriptors.resize(static_cast<Eigen::Index>(features.size()), 8);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& [cam_id, desc] = features[i];
    f.descriptors.row(static_cast<Eigen::Index>(i)) = desc;
    BearingFeature bf;
    bf.camera_id = cam_id;
    bf.bearing = Vec3::UnitZ();
    bf.descriptor_id = static_cast<int>(i);
    cams[cam_id].camera_id = cam_id;
    cams[cam_id].features.push_back(bf);
  }
  for (auto& [id, cf] : cams) f.cameras.push_back(std::move(cf));
  return f;
}

}  // namespace

TEST_CASE("image cost factor matches the balancing formula") {
  CHECK(image_cost_factor(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(image_cost_factor(5) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(image_cost_factor(35) == doctest::Approx(3.0).epsilon(1e-12));
  double prev = image_cost_factor(0);
  for (std::uint64_t m = 1; m <= 10000; ++m) {
    const double c = image_cost_factor(m);
    CHECK(c > prev);
    prev = c;
  }
}

TEST_CASE("next_feature prefers the cheapest scaled image head") {
  TinyWorld w;
  for (int i = 0; i < 3; ++i) w.add_point(0, TinyWorld::unit(0), 10 + i);
  for (int i = 0; i < 5; ++i) w.add_point(1, TinyWorld::unit(1), 20 + i);
  const GlobalMap map = w.build();

  // camera 0's head feature sits in the 3-candidate word, camera 1's in the
  // 5-candidate word
  const QueryFrame frame =
      make_frame({{0, TinyWorld::unit(0)}, {1, TinyWorld::unit(1)}});

  SUBCASE("equal match counts prefer the smaller word") {
    PriorityState state(frame, map, nullptr, {});
    const auto pick = state.next_feature();
    REQUIRE(pick.has_value());
    CHECK(pick->camera_slot == 0);
  }
  SUBCASE("a busy image yields to an idle one") {
    PriorityState state(frame, map, nullptr, {});
    for (int i = 0; i < 5; ++i) state.note_match(0);  // c_I(5) = 2 -> cost 6 vs 5
    const auto pick = state.next_feature();
    REQUIRE(pick.has_value());
    CHECK(pick->camera_slot == 1);
  }
  SUBCASE("exhaustion") {
    PriorityState state(frame, map, nullptr, {});
    CHECK(state.next_feature().has_value());
    CHECK(state.next_feature().has_value());
    CHECK_FALSE(state.next_feature().has_value());
  }
  SUBCASE("disabled balancing ignores match counts") {
    MatcherConfig cfg;
    cfg.balance_images = false;
    PriorityState state(frame, map, nullptr, cfg);
    for (int i = 0; i < 100; ++i) state.note_match(0);
    const auto pick = state.next_feature();
    REQUIRE(pick.has_value());
    CHECK(pick->camera_slot == 0);
  }
}

TEST_CASE("per-image popped candidate counts are nondecreasing") {
  TinyWorld w;
  // words of sizes 1, 2, 4, 7
  w.add_point(0, TinyWorld::unit(0), 1);
  for (int i = 0; i < 2; ++i) w.add_point(1, TinyWorld::unit(1), 2);
  for (int i = 0; i < 4; ++i) w.add_point(2, TinyWorld::unit(2), 3);
  for (int i = 0; i < 7; ++i) w.add_point(3, TinyWorld::unit(3), 4);
  const GlobalMap map = w.build();

  // two cameras, interleaved feature-word assignments
  const QueryFrame frame = make_frame({{0, TinyWorld::unit(3)},
                                       {0, TinyWorld::unit(0)},
                                       {0, TinyWorld::unit(2)},
                                       {1, TinyWorld::unit(1)},
                                       {1, TinyWorld::unit(2)},
                                       {1, TinyWorld::unit(0)}});
  PriorityState state(frame, map, nullptr, {});
  std::map<int, std::vector<std::size_t>> popped;
  while (const auto pick = state.next_feature())
    popped[pick->camera_slot].push_back(
        state.candidates(pick->camera_slot, pick->feature_index).size());
  for (const auto& [slot, counts] : popped) {
    REQUIRE(counts.size() == 3);
    CHECK(std::is_sorted(counts.begin(), counts.end()));
  }
}

TEST_CASE("match_forward single candidate and backward acceptance") {
  TinyWorld w;
  const Eigen::VectorXf pdesc = TinyWorld::unit(0);
  w.add_point(0, pdesc, 1);
  w.add_point(5, TinyWorld::unit(5), 2);  // unrelated filler point
  const GlobalMap map = w.build();

  const Eigen::VectorXf query = TinyWorld::at_distance(pdesc, 3, 0.3);
  const QueryFrame frame = make_frame({{0, query}, {0, TinyWorld::unit(6)}});

  const auto r = match_forward(frame, map, 0, 0, map.word_entries(0), {});
  REQUIRE(r.match.has_value());
  CHECK(r.match->distance == doctest::Approx(0.3).epsilon(1e-5));
  CHECK(r.match->origin == MatchOrigin::Forward);
  CHECK(r.match->point_id == 100);
}

TEST_CASE("match_forward rejects a failing forward ratio") {
  TinyWorld w;
  const Eigen::VectorXf base = TinyWorld::unit(0);
  // two candidates in the word at distances 0.4 and 0.42 from the query
  w.add_point(0, TinyWorld::at_distance(base, 3, 0.4), 1);
  w.add_point(0, TinyWorld::at_distance(base, 4, 0.42), 2);
  const GlobalMap map = w.build();

  const QueryFrame frame = make_frame({{0, base}});
  MatcherConfig cfg;
  cfg.ratio_forward = 0.9;
  const auto r = match_forward(frame, map, 0, 0, map.word_entries(0), cfg);
  CHECK_FALSE(r.match.has_value());  // 0.4 / 0.42 = 0.952 >= 0.9

  cfg.ratio_forward = 0.96;
  const auto r2 = match_forward(frame, map, 0, 0, map.word_entries(0), cfg);
  CHECK(r2.match.has_value());
}

TEST_CASE("match_forward rejects when the point prefers another feature") {
  TinyWorld w;
  const Eigen::VectorXf pdesc = TinyWorld::unit(0);
  w.add_point(0, pdesc, 1);
  const GlobalMap map = w.build();

  const Eigen::VectorXf f1 = TinyWorld::at_distance(pdesc, 3, 0.3);
  const Eigen::VectorXf f2 = TinyWorld::at_distance(pdesc, 4, 0.1);
  const QueryFrame frame = make_frame({{0, f1}, {0, f2}});

  // f1's best word candidate is the point, but the point's best feature is f2
  const auto r = match_forward(frame, map, 0, 0, map.word_entries(0), {});
  CHECK_FALSE(r.match.has_value());
}

TEST_CASE("expand_covisible behavior") {
  SUBCASE("no covisible neighbors yields nothing") {
    TinyWorld w;
    w.add_point(0, TinyWorld::unit(0), 1);
    w.add_point(1, TinyWorld::unit(1), 2);  // different frame, not covisible
    const GlobalMap map = w.build();
    const QueryFrame frame = make_frame({{0, TinyWorld::unit(0)}});
    Correspondence m;
    m.camera_id = 0;
    m.feature_index = 0;
    m.point_index = 0;
    m.distance = 0.2;
    CHECK(expand_covisible(m, frame, map, nullptr, {}, nullptr).empty());
  }

  SUBCASE("planted covisible copy matches at distance zero") {
    TinyWorld w;
    w.add_point(0, TinyWorld::unit(0), 1);
    w.add_point(1, TinyWorld::unit(1), 1);  // covisible neighbor
    const GlobalMap map = w.build();
    const QueryFrame frame = make_frame({{0, TinyWorld::unit(0)}, {1, TinyWorld::unit(1)}});
    Correspondence m;
    m.camera_id = 0;
    m.feature_index = 0;
    m.point_index = 0;
    m.distance = 0.2;
    const auto ex = expand_covisible(m, frame, map, nullptr, {}, nullptr);
    REQUIRE(ex.size() == 1);
    CHECK(ex[0].origin == MatchOrigin::Expansion);
    CHECK(ex[0].point_index == 1);
    CHECK(ex[0].camera_id == 1);
    CHECK(ex[0].distance == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(ex[0].generating_distance == doctest::Approx(0.2));
  }

  SUBCASE("neighbor beyond twice the generating distance is rejected") {
    TinyWorld w;
    w.add_point(0, TinyWorld::unit(0), 1);
    w.add_point(1, TinyWorld::unit(1), 1);
    const GlobalMap map = w.build();
    // best feature for the neighbor sits at 2.1x the generating distance
    const QueryFrame frame = make_frame(
        {{0, TinyWorld::unit(0)}, {1, TinyWorld::at_distance(TinyWorld::unit(1), 4, 0.42)}});
    Correspondence m;
    m.camera_id = 0;
    m.feature_index = 0;
    m.point_index = 0;
    m.distance = 0.2;
    CHECK(expand_covisible(m, frame, map, nullptr, {}, nullptr).empty());

    m.distance = 0.21;  // cap becomes exactly 0.42
    CHECK(expand_covisible(m, frame, map, nullptr, {}, nullptr).size() == 1);
  }
}

TEST_CASE("run_matching delivers ceil(F/B) batches and processes every feature") {
  TinyWorld w;
  for (int word = 0; word < 8; ++word) w.add_point(word, TinyWorld::unit(word), word);
  const GlobalMap map = w.build();

  std::vector<std::pair<int, Eigen::VectorXf>> feats;
  for (int i = 0; i < 45; ++i)
    feats.emplace_back(i % 3, TinyWorld::at_distance(TinyWorld::unit(i % 8), (i + 3) % 8, 0.5));
  const QueryFrame frame = make_frame(feats);

  MatcherConfig cfg;
  cfg.batch_size = 20;
  std::atomic<bool> stop{false};
  std::size_t batches = 0;
  const MatchStats stats = run_matching(
      frame, map, nullptr, cfg, [&](std::vector<Correspondence>&&) { ++batches; }, stop);
  CHECK(stats.features_processed == 45);
  CHECK(batches == 3);  // ceil(45/20)
  CHECK(stats.batches_delivered == 3);
}

TEST_CASE("run_matching delivers nothing when stopped before the start") {
  TinyWorld w;
  w.add_point(0, TinyWorld::unit(0), 1);
  const GlobalMap map = w.build();
  const QueryFrame frame = make_frame({{0, TinyWorld::unit(0)}});
  std::atomic<bool> stop{true};
  std::size_t batches = 0;
  const MatchStats stats = run_matching(
      frame, map, nullptr, {}, [&](std::vector<Correspondence>&&) { ++batches; }, stop);
  CHECK(batches == 0);
  CHECK(stats.features_processed == 0);
}

TEST_CASE("run_matching never delivers a duplicate correspondence") {
  const sim::SceneSpec spec = [] {
    sim::SceneSpec s;
    s.point_count = 2000;
    s.extent = Vec3(60, 60, 12);
    s.cell_size = 15.0;
    s.descriptor_dim = 32;
    s.max_features_per_camera = 60;
    s.seed = 33;
    return s;
  }();
  const sim::Scene scene = sim::generate_scene(spec);
  sim::SceneMapOptions mo;
  mo.word_count = 64;
  const GlobalMap map = sim::build_scene_map(scene, mo);
  const CameraRig rig = sim::make_default_rig();
  const Pose pose(Quat::Identity(), Vec3(30, 30, 6));
  const sim::RenderedFrame rf = sim::render_frame(scene, rig, pose, 5, 0.5);

  std::atomic<bool> stop{false};
  std::set<std::tuple<int, int, std::uint32_t>> seen;
  bool duplicate = false;
  std::size_t delivered = 0;
  run_matching(
      rf.frame, map, nullptr, {},
      [&](std::vector<Correspondence>&& batch) {
        for (const auto& c : batch) {
          ++delivered;
          if (!seen.insert({c.camera_id, c.feature_index, c.point_index}).second)
            duplicate = true;
        }
      },
      stop);
  CHECK_FALSE(duplicate);
  CHECK(delivered > 10);
}

TEST_CASE("matches on a rendered frame point at their planted points") {
  const sim::SceneSpec spec = [] {
    sim::SceneSpec s;
    s.point_count = 2500;
    s.extent = Vec3(60, 60, 12);
    s.cell_size = 15.0;
    s.descriptor_dim = 32;
    s.descriptor_noise = 0.15;
    s.outlier_fraction = 0.2;
    s.bearing_noise_deg = 0.1;
    s.max_features_per_camera = 60;
    s.seed = 34;
    return s;
  }();
  const sim::Scene scene = sim::generate_scene(spec);
  sim::SceneMapOptions mo;
  mo.word_count = 64;
  const GlobalMap map = sim::build_scene_map(scene, mo);
  const CameraRig rig = sim::make_default_rig();
  const Pose pose(Quat::Identity(), Vec3(30, 30, 6));
  const sim::RenderedFrame rf = sim::render_frame(scene, rig, pose, 6, 0.6);

  const double alpha = 1.0 * M_PI / 180.0;
  std::atomic<bool> stop{false};
  std::size_t planted_pairs = 0;
  run_matching(
      rf.frame, map, nullptr, {},
      [&](std::vector<Correspondence>&& batch) {
        for (const auto& c : batch) {
          // locate the feature's descriptor row
          for (const auto& cam : rf.frame.cameras) {
            if (cam.camera_id != c.camera_id) continue;
            const BearingFeature& f = cam.features[c.feature_index];
            if (rf.labels[f.descriptor_id] ==
                static_cast<std::int64_t>(c.point_index)) {
              ++planted_pairs;
              CHECK(angular_error(pose, rig, c.camera_id, f.bearing,
                                  scene.points[c.point_index]) <= alpha);
            }
          }
        }
      },
      stop);
  CHECK(planted_pairs > 10);
}
