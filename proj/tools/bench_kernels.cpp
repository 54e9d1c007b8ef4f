// Benchmark of the OpenMP kernels against their serial reference
// implementations, plus the fast localization pipeline against the
// exhaustive reference pipeline on one synthetic frame.

#include <omp.h>

#include <chrono>
#include <cstdio>

#include "mcloc/random.hpp"
#include "mcloc/reference.hpp"
#include "mcloc/sim.hpp"

using namespace mcloc;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

DescMatrix random_block(int n, int dim, std::uint64_t seed) {
  auto rng = make_rng(seed, 0xbe);
  std::normal_distribution<double> g(0.0, 1.0);
  DescMatrix m(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) m(i, d) = static_cast<float>(g(rng));
  return m;
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_ms();
    f();
    best = std::min(best, now_ms() - t0);
  }
  return best;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", omp_get_max_threads());

  {
    const int n = 20000, dim = 128, words = 1024;
    const DescMatrix queries = random_block(n, dim, 1);
    const DescMatrix centroids = random_block(words, dim, 2);
    std::vector<std::int32_t> idx(n);

    const double serial = time_best_of(3, [&] {
      kernels::assign_nearest(queries, centroids, idx.data(), nullptr, kernels::Exec::Serial);
    });
    const double parallel = time_best_of(3, [&] {
      kernels::assign_nearest(queries, centroids, idx.data(), nullptr, kernels::Exec::Parallel);
    });
    std::printf("nearest-centroid assignment (%d x %d vs %d words)\n", n, dim, words);
    std::printf("  serial   %8.1f ms\n", serial);
    std::printf("  parallel %8.1f ms   (speedup %.2fx)\n\n", parallel, serial / parallel);
  }

  {
    const int n = 50000, dim = 128, k = 256;
    const DescMatrix data = random_block(n, dim, 3);
    const DescMatrix centroids = random_block(k, dim, 4);
    const double serial = time_best_of(3, [&] {
      kernels::quantization_error(data, centroids, kernels::Exec::Serial);
    });
    const double parallel = time_best_of(3, [&] {
      kernels::quantization_error(data, centroids, kernels::Exec::Parallel);
    });
    std::printf("quantization error (%d x %d vs %d centroids)\n", n, dim, k);
    std::printf("  serial   %8.1f ms\n", serial);
    std::printf("  parallel %8.1f ms   (speedup %.2fx)\n\n", parallel, serial / parallel);
  }

  {
    std::printf("pipeline comparison on one synthetic frame\n");
    sim::SceneSpec spec;
    spec.point_count = 20000;
    spec.extent = Vec3(150, 150, 16);
    spec.cell_size = 20.0;
    spec.seed = 9;
    const sim::Scene scene = sim::generate_scene(spec);
    sim::SceneMapOptions mo;
    mo.word_count = 512;
    const GlobalMap map = sim::build_scene_map(scene, mo);
    const CameraRig rig = sim::make_default_rig();
    const Pose truth(so3_exp(Vec3(0, 0, 0.4)), Vec3(75, 75, 8));
    const sim::RenderedFrame rf = sim::render_frame(scene, rig, truth, 1, 0.0);

    LocalizeConfig cfg;
    cfg.ransac.seed = 5;
    const double fast =
        time_best_of(3, [&] { localize(rf.frame, map, rig, std::nullopt, cfg); });
    const LocalizationResult fast_res = localize(rf.frame, map, rig, std::nullopt, cfg);

    ReferenceConfig ref;
    ref.seed = 5;
    const double slow =
        time_best_of(1, [&] { reference_localize(rf.frame, map, rig, ref); });
    const LocalizationResult ref_res = reference_localize(rf.frame, map, rig, ref);

    std::printf("  iterative pipeline  %8.1f ms, %llu comparisons, pose error %.4f m\n", fast,
                static_cast<unsigned long long>(fast_res.stats.descriptor_comparisons),
                fast_res.pose.translation_distance_to(truth));
    std::printf("  exhaustive+RANSAC   %8.1f ms, %llu comparisons, pose error %.4f m\n", slow,
                static_cast<unsigned long long>(ref_res.stats.descriptor_comparisons),
                ref_res.pose.translation_distance_to(truth));
  }
  return 0;
}
