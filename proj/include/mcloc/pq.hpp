#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mcloc/vocabulary.hpp"

namespace mcloc {

struct UntrainedCodebook : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Product quantizer: M subquantizers of K centroids over D/M-dim subvectors.
struct PQCodebook {
  int M = 0;
  int K = 0;
  int dim = 0;                  // full descriptor dimension D
  DescMatrix centroids;         // (M*K) x (D/M); subquantizer m occupies rows [m*K, (m+1)*K)

  bool trained() const { return M > 0 && centroids.rows() == Eigen::Index(M) * K; }
  int sub_dim() const { return dim / M; }
  const float* centroid(int m, int code) const {
    return centroids.row(static_cast<Eigen::Index>(m) * K + code).data();
  }
};

PQCodebook pq_train(const DescMatrix& training, int M, int K, std::uint64_t seed,
                    const KMeansOptions& opts = {});

void pq_encode(const PQCodebook& cb, const float* descriptor, std::uint8_t* code_out);
CodeMatrix pq_encode_all(const PQCodebook& cb, const DescMatrix& descriptors,
                         kernels::Exec exec = kernels::Exec::Parallel);

Eigen::VectorXf pq_reconstruct(const PQCodebook& cb, const std::uint8_t* code);

/// Asymmetric distance: exact query subvectors against the code's
/// reconstruction. Equals the L2 distance between the query and the
/// reconstructed vector.
double pq_distance(const PQCodebook& cb, const float* query, const std::uint8_t* code);

}  // namespace mcloc
