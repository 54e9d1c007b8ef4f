#include <doctest.h>
#include <set>

#include "support.hpp"

#include "mcloc/ransac.hpp"

using namespace mcloc;

namespace {

struct LocalizeFixture {
  sim::Scene scene;
  GlobalMap map;
  CameraRig rig = sim::make_default_rig();

  LocalizeFixture() {
    sim::SceneSpec spec;
    spec.point_count = 6000;
    spec.extent = Vec3(80, 80, 14);
    spec.cell_size = 16.0;
    spec.descriptor_dim = 32;
    spec.descriptor_noise = 0.25;
    spec.outlier_fraction = 0.3;
    spec.bearing_noise_deg = 0.1;
    spec.max_features_per_camera = 80;
    spec.seed = 71;
    scene = sim::generate_scene(spec);
    sim::SceneMapOptions mo;
    mo.word_count = 128;
    map = sim::build_scene_map(scene, mo);
  }

  static const LocalizeFixture& instance() {
    static LocalizeFixture f;
    return f;
  }
};

LocalizeConfig make_config(std::uint64_t seed, bool deterministic = true) {
  LocalizeConfig cfg;
  cfg.deterministic = deterministic;
  cfg.ransac.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("localize recovers rendered frames accurately") {
  const auto& fx = LocalizeFixture::instance();
  int localized = 0;
  int accurate = 0;
  for (int i = 0; i < 10; ++i) {
    const Pose truth(so3_exp(Vec3(0, 0, 0.6 * i)), Vec3(25.0 + 3.0 * i, 40.0, 7.0));
    const sim::RenderedFrame rf = sim::render_frame(fx.scene, fx.rig, truth, 100 + i, 0.1 * i);
    const LocalizationResult res =
        localize(rf.frame, fx.map, fx.rig, std::nullopt, make_config(1000 + i));
    if (res.status != LocalizationStatus::Localized) continue;
    ++localized;
    if (res.pose.translation_distance_to(truth) < 0.05 &&
        res.pose.rotation_angle_to(truth) < 0.5 * M_PI / 180.0)
      ++accurate;
    CHECK(res.stats.matches_found >= 15);
    CHECK(res.inliers.size() >= 15);

    // the acceptance rule must be re-checkable from the result alone
    std::set<int> cams;
    for (const auto& c : res.inliers) cams.insert(c.camera_id);
    CHECK(2 * static_cast<int>(cams.size()) > static_cast<int>(fx.rig.size()));
    CHECK(static_cast<double>(res.inliers.size()) / res.stats.matches_found >= 0.20);
  }
  CHECK(localized >= 9);
  // 32-dim descriptors admit more confusable matches than the 128-dim
  // default, so a rare coarse acceptance is tolerated here
  CHECK(accurate >= 8);
}

TEST_CASE("localize with zero features fails with zero statistics") {
  const auto& fx = LocalizeFixture::instance();
  QueryFrame empty;
  empty.frame_id = 9;
  const LocalizationResult res =
      localize(empty, fx.map, fx.rig, std::nullopt, make_config(1));
  CHECK(res.status == LocalizationStatus::Failed);
  CHECK(res.stats.features_processed == 0);
  CHECK(res.stats.matches_found == 0);
  CHECK(res.stats.descriptor_comparisons == 0);
}

TEST_CASE("deterministic localize is run-to-run identical") {
  const auto& fx = LocalizeFixture::instance();
  const Pose truth(so3_exp(Vec3(0, 0, 1.0)), Vec3(45, 35, 7));
  const sim::RenderedFrame rf = sim::render_frame(fx.scene, fx.rig, truth, 500, 1.0);

  const LocalizationResult a = localize(rf.frame, fx.map, fx.rig, std::nullopt, make_config(7));
  const LocalizationResult b = localize(rf.frame, fx.map, fx.rig, std::nullopt, make_config(7));
  CHECK(a.status == b.status);
  CHECK(a.pose.q.coeffs() == b.pose.q.coeffs());
  CHECK(a.pose.t == b.pose.t);
  CHECK(a.stats.features_processed == b.stats.features_processed);
  CHECK(a.stats.descriptor_comparisons == b.stats.descriptor_comparisons);
  CHECK(a.stats.ransac_iterations == b.stats.ransac_iterations);
  CHECK(a.inliers.size() == b.inliers.size());
}

TEST_CASE("parallel pipeline accepts and satisfies the acceptance rule") {
  const auto& fx = LocalizeFixture::instance();
  const Pose truth(so3_exp(Vec3(0, 0, 2.0)), Vec3(40, 50, 7));
  const sim::RenderedFrame rf = sim::render_frame(fx.scene, fx.rig, truth, 600, 2.0);

  const LocalizationResult res =
      localize(rf.frame, fx.map, fx.rig, std::nullopt, make_config(3, /*deterministic=*/false));
  REQUIRE(res.status == LocalizationStatus::Localized);
  CHECK(res.pose.translation_distance_to(truth) < 0.05);
  CHECK(res.inliers.size() >= 15);
  std::set<int> cams;
  for (const auto& c : res.inliers) cams.insert(c.camera_id);
  CHECK(2 * static_cast<int>(cams.size()) > static_cast<int>(fx.rig.size()));
}

TEST_CASE("early termination processes only part of the frame") {
  const auto& fx = LocalizeFixture::instance();
  const Pose truth(so3_exp(Vec3(0, 0, 0.3)), Vec3(30, 30, 7));
  const sim::RenderedFrame rf = sim::render_frame(fx.scene, fx.rig, truth, 700, 3.0);

  const LocalizationResult res =
      localize(rf.frame, fx.map, fx.rig, std::nullopt, make_config(5));
  REQUIRE(res.status == LocalizationStatus::Localized);
  CHECK(res.stats.features_processed < res.stats.features_total);
}

TEST_CASE("localize with a prior keeps success and reduces comparisons") {
  const auto& fx = LocalizeFixture::instance();
  const Pose truth(so3_exp(Vec3(0, 0, 1.3)), Vec3(50, 45, 7));
  const sim::RenderedFrame rf = sim::render_frame(fx.scene, fx.rig, truth, 800, 4.0);

  const LocalizationResult plain =
      localize(rf.frame, fx.map, fx.rig, std::nullopt, make_config(6));

  PosePrior prior;
  prior.prior_pose = Pose(truth.q * Quat(Eigen::AngleAxisd(0.05, Vec3::UnitZ())),
                          truth.t + Vec3(6.0, -4.0, 0.0));
  prior.position_radius = 30.0;
  prior.heading_half_angle = 8.0 * M_PI / 180.0;
  LocalizeConfig cfg = make_config(6);
  cfg.filter.base_inlier_angle = 2.0 * M_PI / 180.0;
  const LocalizationResult with_prior = localize(rf.frame, fx.map, fx.rig, prior, cfg);

  REQUIRE(plain.status == LocalizationStatus::Localized);
  REQUIRE(with_prior.status == LocalizationStatus::Localized);
  CHECK(with_prior.pose.translation_distance_to(truth) < 0.05);
  CHECK(with_prior.stats.descriptor_comparisons < plain.stats.descriptor_comparisons);
}
