#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace mcloc {

// Row-major so a descriptor is one contiguous row.
using DescMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CodeMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace kernels {

enum class Exec { Serial, Parallel };

float sq_dist(const float* a, const float* b, int dim);

/// Index of the nearest centroid (ties resolved to the lowest index) and its
/// squared distance.
struct Nearest {
  std::int32_t index = -1;
  float sq_dist = 0.0f;
};

Nearest nearest_centroid(const float* query, const DescMatrix& centroids);

/// Nearest centroid for each query row. The parallel variant distributes rows
/// over OpenMP threads; each row uses the identical scalar scan, so results
/// are bitwise equal to the serial variant.
void assign_nearest(const DescMatrix& queries, const DescMatrix& centroids,
                    std::int32_t* out_index, float* out_sq_dist, Exec exec);

std::vector<std::int32_t> assign_nearest(const DescMatrix& queries,
                                         const DescMatrix& centroids, Exec exec);

/// Two smallest distances of `query` against a subset of rows of `block`.
/// Exactly one candidate leaves `second_sq_dist` at infinity.
struct TwoNearest {
  std::int32_t best = -1;
  std::int32_t second = -1;  // row index, -1 if fewer than two candidates
  float best_sq_dist = 0.0f;
  float second_sq_dist = 0.0f;
};

TwoNearest two_nearest(const float* query, const DescMatrix& block,
                       const std::uint32_t* row_indices, std::size_t count);
TwoNearest two_nearest_all(const float* query, const DescMatrix& block);

/// Mean squared distance of every row to its nearest centroid.
double quantization_error(const DescMatrix& data, const DescMatrix& centroids, Exec exec);

}  // namespace kernels
}  // namespace mcloc
