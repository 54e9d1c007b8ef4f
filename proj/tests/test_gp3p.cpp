#include <doctest.h>

#include "support.hpp"

using namespace mcloc;
using test_support::random_pose;
using test_support::random_point;
using test_support::rays_from_pose;

namespace {

bool contains_pose(const std::vector<Pose>& solutions, const Pose& truth, double tol_t,
                   double tol_r) {
  for (const Pose& s : solutions)
    if (s.translation_distance_to(truth) < tol_t && s.rotation_angle_to(truth) < tol_r)
      return true;
  return false;
}

std::array<Vec3, 3> random_origins(std::mt19937_64& rng, double scale = 1.0) {
  return {test_support::random_point(rng, scale), test_support::random_point(rng, scale),
          test_support::random_point(rng, scale)};
}

std::array<Vec3, 3> random_triangle(std::mt19937_64& rng, double scale = 15.0) {
  for (;;) {
    std::array<Vec3, 3> pts = {test_support::random_point(rng, scale),
                               test_support::random_point(rng, scale),
                               test_support::random_point(rng, scale)};
    const double area = 0.5 * (pts[1] - pts[0]).cross(pts[2] - pts[0]).norm();
    if (area > 1.0) return pts;
  }
}

}  // namespace

TEST_CASE("gp3p recovers the identity pose") {
  auto rng = make_rng(200, 1);
  const std::array<Vec3, 3> origins = {Vec3(0.5, 0, 0), Vec3(-0.3, 0.2, 0), Vec3(0, -0.4, 0.1)};
  const std::array<Vec3, 3> points = {Vec3(5, 1, 2), Vec3(-2, 6, 1), Vec3(1, -3, 7)};
  const auto rays = rays_from_pose(Pose::identity(), origins, points);
  const auto solutions = gp3p_solve(rays);
  REQUIRE(!solutions.empty());
  CHECK(contains_pose(solutions, Pose::identity(), 1e-9, 1e-9));
}

TEST_CASE("gp3p recovers random known poses") {
  auto rng = make_rng(201, 1);
  int failures = 0;
  const int trials = 2000;
  for (int i = 0; i < trials; ++i) {
    const Pose truth = random_pose(rng, 20.0);
    const auto origins = random_origins(rng);
    const auto points = random_triangle(rng);
    const auto rays = rays_from_pose(truth, origins, points);
    const auto solutions = gp3p_solve(rays);
    if (!contains_pose(solutions, truth, 1e-6, 1e-6)) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("gp3p solutions reproject their minimal set") {
  auto rng = make_rng(202, 1);
  for (int i = 0; i < 300; ++i) {
    const Pose truth = random_pose(rng, 20.0);
    const auto rays = rays_from_pose(truth, random_origins(rng), random_triangle(rng));
    for (const Pose& s : gp3p_solve(rays))
      for (const RayPoint& r : rays) CHECK(ray_point_angle(s, r) < 1e-9);
  }
}

TEST_CASE("gp3p rejects collinear points") {
  std::array<RayPoint, 3> rays;
  rays[0] = {Vec3::Zero(), Vec3::UnitZ(), Vec3(0, 0, 5)};
  rays[1] = {Vec3(0.1, 0, 0), Vec3::UnitZ(), Vec3(0, 0, 7)};
  rays[2] = {Vec3(0.2, 0, 0), Vec3::UnitZ(), Vec3(0, 0, 9)};
  CHECK_THROWS_AS(gp3p_solve(rays), DegenerateError);
}

TEST_CASE("gp3p rejects duplicated rays") {
  std::array<RayPoint, 3> rays;
  rays[0] = {Vec3::Zero(), Vec3::UnitZ(), Vec3(0, 1, 5)};
  rays[1] = {Vec3::Zero(), Vec3::UnitZ(), Vec3(1, 0, 5)};
  rays[2] = {Vec3(0.2, 0, 0), Vec3(0, 1, 0), Vec3(0.2, 9, 0)};
  CHECK_THROWS_AS(gp3p_solve(rays), DegenerateError);
}

TEST_CASE("gp3p handles the central-camera special case") {
  auto rng = make_rng(203, 1);
  for (int i = 0; i < 200; ++i) {
    const Pose truth = random_pose(rng, 20.0);
    const std::array<Vec3, 3> origins = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    const auto rays = rays_from_pose(truth, origins, random_triangle(rng));
    CHECK(contains_pose(gp3p_solve(rays), truth, 1e-6, 1e-6));
  }
}
