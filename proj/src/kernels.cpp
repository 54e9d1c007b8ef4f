#include "mcloc/kernels.hpp"

#include <limits>

namespace mcloc::kernels {

float sq_dist(const float* a, const float* b, int dim) {
  Eigen::Map<const Eigen::VectorXf> va(a, dim);
  Eigen::Map<const Eigen::VectorXf> vb(b, dim);
  return (va - vb).squaredNorm();
}

Nearest nearest_centroid(const float* query, const DescMatrix& centroids) {
  Nearest best;
  best.sq_dist = std::numeric_limits<float>::infinity();
  const int dim = static_cast<int>(centroids.cols());
  for (Eigen::Index w = 0; w < centroids.rows(); ++w) {
    const float d = sq_dist(query, centroids.row(w).data(), dim);
    if (d < best.sq_dist) {
      best.sq_dist = d;
      best.index = static_cast<std::int32_t>(w);
    }
  }
  return best;
}

void assign_nearest(const DescMatrix& queries, const DescMatrix& centroids,
                    std::int32_t* out_index, float* out_sq_dist, Exec exec) {
  const Eigen::Index n = queries.rows();
  if (exec == Exec::Serial) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Nearest r = nearest_centroid(queries.row(i).data(), centroids);
      out_index[i] = r.index;
      if (out_sq_dist) out_sq_dist[i] = r.sq_dist;
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const Nearest r = nearest_centroid(queries.row(i).data(), centroids);
    out_index[i] = r.index;
    if (out_sq_dist) out_sq_dist[i] = r.sq_dist;
  }
}

std::vector<std::int32_t> assign_nearest(const DescMatrix& queries,
                                         const DescMatrix& centroids, Exec exec) {
  std::vector<std::int32_t> idx(queries.rows());
  assign_nearest(queries, centroids, idx.data(), nullptr, exec);
  return idx;
}

namespace {

inline void consider(TwoNearest& acc, std::int32_t row, float d) {
  if (d < acc.best_sq_dist || acc.best < 0) {
    acc.second = acc.best;
    acc.second_sq_dist = acc.best_sq_dist;
    acc.best = row;
    acc.best_sq_dist = d;
  } else if (d < acc.second_sq_dist || acc.second < 0) {
    acc.second = row;
    acc.second_sq_dist = d;
  }
}

}  // namespace

TwoNearest two_nearest(const float* query, const DescMatrix& block,
                       const std::uint32_t* row_indices, std::size_t count) {
  TwoNearest acc;
  acc.best_sq_dist = acc.second_sq_dist = std::numeric_limits<float>::infinity();
  const int dim = static_cast<int>(block.cols());
  for (std::size_t k = 0; k < count; ++k) {
    const std::int32_t row = static_cast<std::int32_t>(row_indices[k]);
    consider(acc, row, sq_dist(query, block.row(row).data(), dim));
  }
  return acc;
}

TwoNearest two_nearest_all(const float* query, const DescMatrix& block) {
  TwoNearest acc;
  acc.best_sq_dist = acc.second_sq_dist = std::numeric_limits<float>::infinity();
  const int dim = static_cast<int>(block.cols());
  for (Eigen::Index row = 0; row < block.rows(); ++row) {
    consider(acc, static_cast<std::int32_t>(row), sq_dist(query, block.row(row).data(), dim));
  }
  return acc;
}

double quantization_error(const DescMatrix& data, const DescMatrix& centroids, Exec exec) {
  const Eigen::Index n = data.rows();
  if (n == 0) return 0.0;
  std::vector<float> dists(n);
  std::vector<std::int32_t> idx(n);
  assign_nearest(data, centroids, idx.data(), dists.data(), exec);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sum += dists[i];
  return sum / static_cast<double>(n);
}

}  // namespace mcloc::kernels
