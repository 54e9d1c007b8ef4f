#include "mcloc/pq.hpp"

#include <cmath>

#include "mcloc/random.hpp"

namespace mcloc {

PQCodebook pq_train(const DescMatrix& training, int M, int K, std::uint64_t seed,
                    const KMeansOptions& opts) {
  const int dim = static_cast<int>(training.cols());
  if (M <= 0 || dim % M != 0)
    throw std::invalid_argument("subquantizer count must divide descriptor dimension");
  if (training.rows() < K)
    throw InsufficientTrainingData("product quantizer needs at least K training vectors");

  PQCodebook cb;
  cb.M = M;
  cb.K = K;
  cb.dim = dim;
  const int sd = dim / M;
  cb.centroids.resize(static_cast<Eigen::Index>(M) * K, sd);
  for (int m = 0; m < M; ++m) {
    DescMatrix sub = training.middleCols(static_cast<Eigen::Index>(m) * sd, sd);
    cb.centroids.middleRows(static_cast<Eigen::Index>(m) * K, K) =
        kmeans(sub, K, derive_seed(seed, 0x7071ULL, m), opts, /*unit_normalize=*/false);
  }
  return cb;
}

void pq_encode(const PQCodebook& cb, const float* descriptor, std::uint8_t* code_out) {
  if (!cb.trained()) throw UntrainedCodebook("product quantizer is not trained");
  const int sd = cb.sub_dim();
  for (int m = 0; m < cb.M; ++m) {
    const DescMatrix block = cb.centroids.middleRows(static_cast<Eigen::Index>(m) * cb.K, cb.K);
    const kernels::Nearest n = kernels::nearest_centroid(descriptor + m * sd, block);
    code_out[m] = static_cast<std::uint8_t>(n.index);
  }
}

CodeMatrix pq_encode_all(const PQCodebook& cb, const DescMatrix& descriptors,
                         kernels::Exec exec) {
  if (!cb.trained()) throw UntrainedCodebook("product quantizer is not trained");
  CodeMatrix codes(descriptors.rows(), cb.M);
  const Eigen::Index n = descriptors.rows();
  if (exec == kernels::Exec::Serial) {
    for (Eigen::Index i = 0; i < n; ++i)
      pq_encode(cb, descriptors.row(i).data(), codes.row(i).data());
  } else {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i)
      pq_encode(cb, descriptors.row(i).data(), codes.row(i).data());
  }
  return codes;
}

Eigen::VectorXf pq_reconstruct(const PQCodebook& cb, const std::uint8_t* code) {
  if (!cb.trained()) throw UntrainedCodebook("product quantizer is not trained");
  const int sd = cb.sub_dim();
  Eigen::VectorXf out(cb.dim);
  for (int m = 0; m < cb.M; ++m)
    out.segment(static_cast<Eigen::Index>(m) * sd, sd) =
        Eigen::Map<const Eigen::VectorXf>(cb.centroid(m, code[m]), sd);
  return out;
}

double pq_distance(const PQCodebook& cb, const float* query, const std::uint8_t* code) {
  if (!cb.trained()) throw UntrainedCodebook("product quantizer is not trained");
  const int sd = cb.sub_dim();
  double acc = 0.0;
  for (int m = 0; m < cb.M; ++m) {
    const float* c = cb.centroid(m, code[m]);
    const float* q = query + m * sd;
    for (int i = 0; i < sd; ++i) {
      const double diff = static_cast<double>(q[i]) - static_cast<double>(c[i]);
      acc += diff * diff;
    }
  }
  return std::sqrt(acc);
}

}  // namespace mcloc
