#pragma once

#include <cstdint>
#include <stdexcept>

#include "mcloc/kernels.hpp"

namespace mcloc {

struct InsufficientTrainingData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Partition of descriptor space by W unit-normalized centroids.
struct Vocabulary {
  DescMatrix words;  // W x D

  int word_count() const { return static_cast<int>(words.rows()); }
  int dim() const { return static_cast<int>(words.cols()); }
};

struct KMeansOptions {
  int max_iterations = 25;
  double rel_tolerance = 1e-4;
  kernels::Exec exec = kernels::Exec::Parallel;
};

/// Plain k-means with k-means++ seeding; centroids renormalized to unit
/// length after every update. Deterministic for a fixed seed.
DescMatrix kmeans(const DescMatrix& training, int k, std::uint64_t seed,
                  const KMeansOptions& opts = {}, bool unit_normalize = true);

Vocabulary build_vocabulary(const DescMatrix& training, int word_count, std::uint64_t seed,
                            const KMeansOptions& opts = {});

/// Exact nearest centroid; ties break to the lowest word id.
std::uint32_t assign_word(const Vocabulary& vocab, const float* descriptor);

/// Renormalize every row to unit L2 norm (zero rows are left untouched).
void normalize_rows(DescMatrix& m);

}  // namespace mcloc
