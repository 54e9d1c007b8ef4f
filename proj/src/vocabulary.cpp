#include "mcloc/vocabulary.hpp"

#include <limits>
#include <random>

#include "mcloc/random.hpp"

namespace mcloc {

void normalize_rows(DescMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const float n = m.row(i).norm();
    if (n > 0.0f) m.row(i) /= n;
  }
}

namespace {

// k-means++: each next center drawn with probability proportional to the
// squared distance to the nearest already-chosen center.
DescMatrix kmeanspp_init(const DescMatrix& data, int k, std::mt19937_64& rng) {
  const Eigen::Index n = data.rows();
  const int dim = static_cast<int>(data.cols());
  DescMatrix centers(k, dim);

  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = data.row(pick(rng));

  std::vector<double> d2(n);
  for (Eigen::Index i = 0; i < n; ++i)
    d2[i] = kernels::sq_dist(data.row(i).data(), centers.row(0).data(), dim);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);  // all remaining points coincide with a center
    } else {
      double target = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    }
    centers.row(c) = data.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = kernels::sq_dist(data.row(i).data(), centers.row(c).data(), dim);
      if (d < d2[i]) d2[i] = d;
    }
  }
  return centers;
}

}  // namespace

DescMatrix kmeans(const DescMatrix& training, int k, std::uint64_t seed,
                  const KMeansOptions& opts, bool unit_normalize) {
  const Eigen::Index n = training.rows();
  const int dim = static_cast<int>(training.cols());
  if (n < k)
    throw InsufficientTrainingData("k-means needs at least k training vectors");

  auto rng = make_rng(seed, 0x6b6d65616e73ULL);
  DescMatrix centers = kmeanspp_init(training, k, rng);
  if (unit_normalize) normalize_rows(centers);

  std::vector<std::int32_t> assignment(n);
  std::vector<float> dists(n);
  double prev_err = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    kernels::assign_nearest(training, centers, assignment.data(), dists.data(), opts.exec);

    double err = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) err += dists[i];
    err /= static_cast<double>(n);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
    std::vector<std::int64_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assignment[i]) += training.row(i).cast<double>();
      counts[assignment[i]]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster on the point farthest from its center.
        Eigen::Index far = 0;
        float far_d = -1.0f;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (dists[i] > far_d) {
            far_d = dists[i];
            far = i;
          }
        }
        centers.row(c) = training.row(far);
        dists[far] = 0.0f;
      } else {
        centers.row(c) = (sums.row(c) / static_cast<double>(counts[c])).cast<float>();
      }
    }
    if (unit_normalize) normalize_rows(centers);

    if (prev_err - err < opts.rel_tolerance * std::max(prev_err, 1e-30)) break;
    prev_err = err;
  }
  return centers;
}

Vocabulary build_vocabulary(const DescMatrix& training, int word_count, std::uint64_t seed,
                            const KMeansOptions& opts) {
  if (training.rows() < word_count)
    throw InsufficientTrainingData("training set smaller than requested word count");
  Vocabulary v;
  v.words = kmeans(training, word_count, seed, opts, /*unit_normalize=*/true);
  return v;
}

std::uint32_t assign_word(const Vocabulary& vocab, const float* descriptor) {
  return static_cast<std::uint32_t>(kernels::nearest_centroid(descriptor, vocab.words).index);
}

}  // namespace mcloc
