#pragma once

#include <random>

#include "mcloc/random.hpp"
#include "mcloc/sim.hpp"
#include "mcloc/solvers.hpp"

namespace test_support {

using namespace mcloc;

inline Pose random_pose(std::mt19937_64& rng, double translation_scale = 10.0) {
  std::uniform_real_distribution<double> u(-translation_scale, translation_scale);
  return Pose(random_rotation(rng), Vec3(u(rng), u(rng), u(rng)));
}

inline Vec3 random_point(std::mt19937_64& rng, double scale = 10.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

/// Rays generated from a known pose: the i-th ray origin/direction in the
/// rig frame point exactly at the i-th world point.
inline std::array<RayPoint, 3> rays_from_pose(const Pose& world_from_rig,
                                              const std::array<Vec3, 3>& origins,
                                              const std::array<Vec3, 3>& world_points) {
  std::array<RayPoint, 3> out;
  const Pose rig_from_world = world_from_rig.inverse();
  for (int i = 0; i < 3; ++i) {
    out[i].origin = origins[i];
    out[i].point = world_points[i];
    out[i].direction = (rig_from_world.act(world_points[i]) - origins[i]).normalized();
  }
  return out;
}

}  // namespace test_support
