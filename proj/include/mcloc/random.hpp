#pragma once

#include <cstdint>
#include <random>

#include "mcloc/pose.hpp"

namespace mcloc {

// splitmix64; used to derive independent child seeds from (seed, stream ids).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return mix64(mix64(mix64(seed ^ a) ^ b) ^ c);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                std::uint64_t c = 0) {
  return std::mt19937_64(derive_seed(seed, a, b, c));
}

inline Vec3 random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.squaredNorm() < 1e-12);
  return v.normalized();
}

inline Quat random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

/// Unit vector at most `max_angle` away from `axis` (uniform over the cap).
inline Vec3 random_in_cone(std::mt19937_64& rng, const Vec3& axis, double max_angle) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cos_a = std::cos(max_angle);
  const double z = cos_a + (1.0 - cos_a) * u(rng);
  const double phi = 2.0 * M_PI * u(rng);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 local(s * std::cos(phi), s * std::sin(phi), z);
  // rotate local +z to axis
  const Vec3 a = axis.normalized();
  if (a.z() > 1.0 - 1e-12) return local;
  if (a.z() < -1.0 + 1e-12) return Vec3(local.x(), -local.y(), -local.z());
  const Vec3 k = Vec3::UnitZ().cross(a).normalized();
  const double ang = std::acos(std::clamp(a.z(), -1.0, 1.0));
  return so3_exp(ang * k) * local;
}

}  // namespace mcloc
