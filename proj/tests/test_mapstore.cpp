#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mcloc/io.hpp"
#include "support.hpp"

using namespace mcloc;

namespace {

DescMatrix random_unit_descriptors(int n, int dim, std::uint64_t seed) {
  auto rng = make_rng(seed, 0xdddd);
  std::normal_distribution<double> g(0.0, 1.0);
  DescMatrix m(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) m(i, d) = static_cast<float>(g(rng));
    m.row(i).normalize();
  }
  return m;
}

// Builds a random map for round-trip and covisibility tests.
GlobalMap random_map(int n_points, int dim, int words, std::uint64_t seed, bool pq = false) {
  auto rng = make_rng(seed, 0xabc);
  const DescMatrix train = random_unit_descriptors(std::max(words, pq ? 300 : words), dim, seed);
  const Vocabulary vocab = build_vocabulary(train, words, seed);

  MapBuilder builder(dim);
  std::uniform_int_distribution<int> n_obs(1, 3);
  std::uniform_int_distribution<std::uint64_t> frame(0, 40);
  std::uniform_int_distribution<std::uint32_t> word(0, static_cast<std::uint32_t>(words - 1));
  const DescMatrix descs = random_unit_descriptors(n_points * 3, dim, seed + 1);
  int next_desc = 0;
  for (int p = 0; p < n_points; ++p) {
    builder.add_point(1000 + p, test_support::random_point(rng, 100.0));
    const int k = n_obs(rng);
    for (int o = 0; o < k; ++o)
      builder.add_observation(1000 + p, word(rng), descs.row(next_desc++ % descs.rows()).data(),
                              frame(rng));
  }
  MapBuildOptions opts;
  opts.use_pq = pq;
  opts.pq_k = 16;  // small maps cannot train 256 centroids
  return builder.build(vocab, opts);
}

}  // namespace

TEST_CASE("build_vocabulary W=1 yields the normalized mean") {
  const DescMatrix train = random_unit_descriptors(50, 16, 7);
  const Vocabulary v = build_vocabulary(train, 1, 3);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(16);
  for (int i = 0; i < 50; ++i) mean += train.row(i).cast<double>();
  mean /= 50.0;
  mean.normalize();
  CHECK((v.words.row(0).cast<double>().transpose() - mean).norm() < 1e-5);
}

TEST_CASE("build_vocabulary W equal to training size reproduces the points") {
  const DescMatrix train = random_unit_descriptors(12, 16, 8);
  const Vocabulary v = build_vocabulary(train, 12, 3);
  for (int i = 0; i < 12; ++i) {
    float best = std::numeric_limits<float>::infinity();
    for (int c = 0; c < 12; ++c)
      best = std::min(best, (v.words.row(c) - train.row(i)).squaredNorm());
    CHECK(best < 1e-8f);
  }
}

TEST_CASE("build_vocabulary beats random centroids on separated clusters") {
  // 4 well-separated synthetic clusters x 4 samples, W = 16.
  auto rng = make_rng(9, 0x11);
  std::normal_distribution<double> g(0.0, 0.02);
  const DescMatrix centers = random_unit_descriptors(4, 32, 10);
  DescMatrix train(16, 32);
  for (int i = 0; i < 16; ++i) {
    for (int d = 0; d < 32; ++d)
      train(i, d) = centers(i % 4, d) + static_cast<float>(g(rng));
    train.row(i).normalize();
  }
  const Vocabulary v = build_vocabulary(train, 16, 3);
  const DescMatrix random_centroids = random_unit_descriptors(16, 32, 77);
  const double trained = kernels::quantization_error(train, v.words, kernels::Exec::Serial);
  const double baseline =
      kernels::quantization_error(train, random_centroids, kernels::Exec::Serial);
  CHECK(trained <= baseline);
}

TEST_CASE("build_vocabulary rejects too-small training sets") {
  const DescMatrix train = random_unit_descriptors(3, 16, 8);
  CHECK_THROWS_AS(build_vocabulary(train, 4, 3), InsufficientTrainingData);
}

TEST_CASE("build_vocabulary is deterministic for a fixed seed") {
  const DescMatrix train = random_unit_descriptors(200, 16, 8);
  const Vocabulary a = build_vocabulary(train, 8, 42);
  const Vocabulary b = build_vocabulary(train, 8, 42);
  CHECK(a.words == b.words);
}

TEST_CASE("assign_word equals the exhaustive argmin and breaks ties low") {
  Vocabulary v;
  v.words = random_unit_descriptors(12, 16, 11);
  // tie: make word 5 identical to word 2
  v.words.row(5) = v.words.row(2);

  const DescMatrix queries = random_unit_descriptors(500, 16, 12);
  for (int i = 0; i < queries.rows(); ++i) {
    // exhaustive scan oracle
    int best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (int w = 0; w < v.words.rows(); ++w) {
      const float d = (queries.row(i) - v.words.row(w)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = w;
      }
    }
    CHECK(assign_word(v, queries.row(i).data()) == static_cast<std::uint32_t>(best));
  }
  CHECK(assign_word(v, v.words.row(5).data()) == 2);  // tie broken to the lower id
  CHECK(assign_word(v, v.words.row(7).data()) == 7);
}

TEST_CASE("averaged descriptors follow the running mean") {
  MapBuilder b(4);
  b.add_point(1, Vec3(0, 0, 0));
  const float d1[4] = {1, 0, 0, 0};
  const float d2[4] = {0, 1, 0, 0};
  b.add_observation(1, 0, d1, 10);
  b.add_observation(1, 0, d2, 11);
  b.add_observation(1, 1, d1, 12);
  b.add_observation(1, 1, d1, 13);

  Vocabulary v;
  v.words = DescMatrix::Zero(2, 4);
  v.words(0, 0) = 1;
  v.words(1, 1) = 1;
  const GlobalMap m = b.build(v);

  // word 0: two orthogonal units -> normalized (a+b)
  const Eigen::VectorXf e0 = m.entry_descriptor(0);
  CHECK(e0[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
  CHECK(e0[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
  // word 1: two identical descriptors -> that descriptor
  const Eigen::VectorXf e1 = m.entry_descriptor(1);
  CHECK(e1[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(m.point(0).frame_count == 4);
}

TEST_CASE("noisy averages converge to the template direction") {
  // Monte Carlo: 100 noisy copies; the averaged direction should be within
  // a few sigma/sqrt(100) of the template.
  const int dim = 64;
  const double sigma = 0.2;
  auto rng = make_rng(21, 0x5);
  std::normal_distribution<double> g(0.0, sigma / std::sqrt(double(dim)));
  const DescMatrix tpl = random_unit_descriptors(1, dim, 31);

  MapBuilder b(dim);
  b.add_point(1, Vec3(0, 0, 0));
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXf d = tpl.row(0);
    for (int k = 0; k < dim; ++k) d[k] += static_cast<float>(g(rng));
    d.normalize();
    b.add_observation(1, 0, d.data(), i);
  }
  Vocabulary v;
  v.words = tpl;
  const GlobalMap m = b.build(v);
  const double angle = std::acos(std::clamp(
      m.entry_descriptor(0).cast<double>().dot(tpl.row(0).cast<double>().transpose()), -1.0,
      1.0));
  CHECK(angle < 3.0 * sigma / 10.0);
  CHECK(std::abs(m.entry_descriptor(0).norm() - 1.0) < 1e-6);
}

TEST_CASE("covisible_points matches brute force and is symmetric") {
  const GlobalMap m = random_map(120, 16, 8, 51);

  // brute-force oracle over pairwise frame-set intersection
  for (std::uint32_t p = 0; p < m.point_count(); ++p) {
    std::vector<std::uint64_t> expect;
    for (std::uint32_t q = 0; q < m.point_count(); ++q) {
      if (p == q) continue;
      std::uint32_t na, nb;
      const std::uint64_t* fa = m.point_frames(p, &na);
      const std::uint64_t* fb = m.point_frames(q, &nb);
      bool shared = false;
      for (std::uint32_t i = 0; i < na && !shared; ++i)
        for (std::uint32_t j = 0; j < nb && !shared; ++j)
          if (fa[i] == fb[j]) shared = true;
      if (shared) expect.push_back(m.point(q).point_id);
    }
    CHECK(m.covisible_points(m.point(p).point_id) == expect);
  }

  // symmetry
  for (std::uint32_t p = 0; p < m.point_count(); ++p)
    for (std::uint64_t qid : m.covisible_points(m.point(p).point_id)) {
      const auto back = m.covisible_points(qid);
      CHECK(std::find(back.begin(), back.end(), m.point(p).point_id) != back.end());
    }
}

TEST_CASE("covisible_points edge cases") {
  MapBuilder b(4);
  const float d[4] = {1, 0, 0, 0};
  b.add_point(1, Vec3(0, 0, 0));
  b.add_observation(1, 0, d, 3);
  Vocabulary v;
  v.words = DescMatrix::Zero(1, 4);
  v.words(0, 0) = 1;
  {
    const GlobalMap m = b.build(v);
    CHECK(m.covisible_points(1).empty());
    CHECK_THROWS_AS(m.covisible_points(999), UnknownPointError);
  }
  b.add_point(2, Vec3(1, 0, 0));
  b.add_observation(2, 0, d, 3);
  const GlobalMap m = b.build(v);
  CHECK(m.covisible_points(1) == std::vector<std::uint64_t>{2});
  CHECK(m.covisible_points(2) == std::vector<std::uint64_t>{1});
}

TEST_CASE("inverted index consistency by full scan") {
  const GlobalMap m = random_map(300, 16, 12, 52);
  CHECK_NOTHROW(m.check_consistency());
}

TEST_CASE("map round trip is deep-equal") {
  const std::string path = "/tmp/mcloc_test_map.mclmap";
  for (bool pq : {false, true}) {
    const GlobalMap m = random_map(1000, 16, 12, 53, pq);
    m.save(path);
    const GlobalMap back = GlobalMap::load(path);
    CHECK(back.deep_equal(m));
    CHECK(m.deep_equal(back));
    CHECK_NOTHROW(back.check_consistency());
  }
  std::filesystem::remove(path);
}

TEST_CASE("empty map round trip") {
  Vocabulary v;
  v.words = random_unit_descriptors(2, 8, 3);
  MapBuilder b(8);
  const GlobalMap m = b.build(v);
  const std::string path = "/tmp/mcloc_empty_map.mclmap";
  m.save(path);
  const GlobalMap back = GlobalMap::load(path);
  CHECK(back.deep_equal(m));
  CHECK(back.point_count() == 0);
  std::filesystem::remove(path);
}

TEST_CASE("map load rejects corruption") {
  const std::string path = "/tmp/mcloc_corrupt_map.mclmap";
  const GlobalMap m = random_map(50, 16, 8, 54);
  m.save(path);

  SUBCASE("corrupted magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXLMAP09", 8);
    f.close();
    CHECK_THROWS_AS(GlobalMap::load(path), MapFormatError);
  }
  SUBCASE("flipped payload byte fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    char c;
    f.seekg(100);
    f.read(&c, 1);
    c ^= 0x40;
    f.seekp(100);
    f.write(&c, 1);
    f.close();
    CHECK_THROWS_AS(GlobalMap::load(path), MapFormatError);
  }
  SUBCASE("truncated file") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(GlobalMap::load(path), MapFormatError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("pq distance equals the distance to the reconstruction") {
  const int dim = 32;
  const DescMatrix train = random_unit_descriptors(600, dim, 61);
  const PQCodebook cb = pq_train(train, 8, 16, 5);

  auto check_identity = [&](const Eigen::VectorXf& q, const std::uint8_t* code) {
    const Eigen::VectorXf recon = pq_reconstruct(cb, code);
    const double direct = (q.cast<double>() - recon.cast<double>()).norm();
    CHECK(pq_distance(cb, q.data(), code) == doctest::Approx(direct).epsilon(1e-12));
  };

  const DescMatrix pairs = random_unit_descriptors(1000, dim, 62);
  std::vector<std::uint8_t> code(8);
  for (int i = 0; i + 1 < pairs.rows(); i += 2) {
    pq_encode(cb, pairs.row(i).data(), code.data());
    const Eigen::VectorXf q = pairs.row(i + 1);
    check_identity(q, code.data());
  }

  // query equal to a reconstruction -> distance 0
  pq_encode(cb, pairs.row(0).data(), code.data());
  const Eigen::VectorXf recon = pq_reconstruct(cb, code.data());
  CHECK(pq_distance(cb, recon.data(), code.data()) < 1e-12);
}

TEST_CASE("pq asymmetric error stays below the empirical quantization bound") {
  const int dim = 32;
  const DescMatrix train = random_unit_descriptors(800, dim, 63);
  const PQCodebook cb = pq_train(train, 8, 16, 5);

  // Empirical mean quantization error of the codebook on fresh data.
  const DescMatrix fresh = random_unit_descriptors(1000, dim, 64);
  double mean_quant = 0.0;
  std::vector<std::uint8_t> code(8);
  for (int i = 0; i < fresh.rows(); ++i) {
    pq_encode(cb, fresh.row(i).data(), code.data());
    mean_quant += (fresh.row(i) - pq_reconstruct(cb, code.data()).transpose()).norm();
  }
  mean_quant /= static_cast<double>(fresh.rows());

  // |pq_distance - exact distance| <= quantization error of the encoded side
  // (triangle inequality); its mean must respect the empirical bound.
  const DescMatrix queries = random_unit_descriptors(1000, dim, 65);
  double mean_err = 0.0;
  for (int i = 0; i < queries.rows(); ++i) {
    const auto& x = fresh.row(i);
    pq_encode(cb, x.data(), code.data());
    const double exact = (queries.row(i) - x).norm();
    const double approx = pq_distance(cb, queries.row(i).data(), code.data());
    mean_err += std::abs(approx - exact);
  }
  mean_err /= static_cast<double>(queries.rows());
  CHECK(mean_err <= mean_quant);
}

TEST_CASE("pq rejects untrained codebooks and bad dimensions") {
  PQCodebook cb;
  std::uint8_t code[8] = {};
  float q[32] = {};
  CHECK_THROWS_AS(pq_distance(cb, q, code), UntrainedCodebook);
  const DescMatrix train = random_unit_descriptors(100, 30, 66);
  CHECK_THROWS_AS(pq_train(train, 8, 16, 5), std::invalid_argument);  // 8 does not divide 30
}

TEST_CASE("builder validates dimensions and empty points") {
  MapBuilder b(8);
  Vocabulary v;
  v.words = random_unit_descriptors(2, 8, 3);
  b.add_point(5, Vec3(1, 2, 3));
  CHECK_THROWS_AS(b.build(v), std::invalid_argument);  // point without observations

  Vocabulary wrong;
  wrong.words = random_unit_descriptors(2, 4, 3);
  const float d[8] = {1, 0, 0, 0, 0, 0, 0, 0};
  b.add_observation(5, 0, d, 1);
  CHECK_THROWS_AS(b.build(wrong), std::invalid_argument);  // dim mismatch
}
