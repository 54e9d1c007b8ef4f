#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcloc/pose.hpp"
#include "mcloc/pq.hpp"
#include "mcloc/vocabulary.hpp"

namespace mcloc {

struct MapFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownPointError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct MapPoint {
  std::uint64_t point_id = 0;
  Vec3 position = Vec3::Zero();
  std::uint32_t entry_begin = 0;  // into the map-wide entry arrays
  std::uint32_t entry_count = 0;
  std::uint32_t frame_begin = 0;  // into the map-wide frame-id array
  std::uint32_t frame_count = 0;
};

/// Frozen sparse map: 3D points with per-word averaged descriptors (plain or
/// product-quantized), an inverted word index, and per-point observing-frame
/// records. Immutable after construction; all queries are const and
/// thread-safe.
class GlobalMap {
 public:
  const Vocabulary& vocabulary() const { return vocab_; }
  bool pq_enabled() const { return pq_.has_value(); }
  const PQCodebook& pq_codebook() const { return *pq_; }
  int descriptor_dim() const { return vocab_.dim(); }

  std::size_t point_count() const { return points_.size(); }
  std::size_t entry_count() const { return entry_word_ids_.size(); }
  const std::vector<MapPoint>& points() const { return points_; }
  const MapPoint& point(std::uint32_t index) const { return points_[index]; }
  std::uint32_t index_of(std::uint64_t point_id) const;
  bool has_point(std::uint64_t point_id) const;

  std::uint32_t entry_word(std::uint32_t entry) const { return entry_word_ids_[entry]; }
  std::uint32_t entry_point(std::uint32_t entry) const { return entry_point_[entry]; }
  const std::vector<std::uint32_t>& word_entries(std::uint32_t word_id) const;

  /// Distance between a query descriptor and a stored entry (exact L2 for
  /// plain storage, asymmetric PQ distance otherwise).
  double entry_distance(const float* query, std::uint32_t entry) const;
  Eigen::VectorXf entry_descriptor(std::uint32_t entry) const;

  /// Observing frames of a point, sorted ascending.
  const std::uint64_t* point_frames(std::uint32_t point_index, std::uint32_t* count) const;
  bool frames_intersect(std::uint32_t point_a, std::uint32_t point_b) const;
  const std::vector<std::uint32_t>& frame_points(std::uint64_t frame_id) const;

  /// Point ids sharing at least one observing frame with `point_id`,
  /// excluding the point itself. Throws UnknownPointError.
  std::vector<std::uint64_t> covisible_points(std::uint64_t point_id) const;
  std::vector<std::uint32_t> covisible_indices(std::uint32_t point_index) const;

  void save(const std::string& path) const;
  static GlobalMap load(const std::string& path);

  /// Full-scan structural check (inverted index mirrors word entries, index
  /// bounds, unit descriptors). Throws MapFormatError on violation.
  void check_consistency() const;

  bool deep_equal(const GlobalMap& other) const;

 private:
  friend class MapBuilder;

  Vocabulary vocab_;
  std::optional<PQCodebook> pq_;
  std::vector<MapPoint> points_;
  std::vector<std::uint32_t> entry_word_ids_;
  std::vector<std::uint32_t> entry_point_;
  DescMatrix entry_descriptors_;  // plain mode: E x D
  CodeMatrix entry_codes_;        // pq mode:    E x M
  std::vector<std::uint64_t> frame_ids_;

  // Derived at freeze time.
  std::vector<std::vector<std::uint32_t>> word_index_;
  std::unordered_map<std::uint64_t, std::uint32_t> id_to_index_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> frame_index_;

  void rebuild_derived();
};

struct MapBuildOptions {
  bool use_pq = false;
  int pq_m = 8;
  int pq_k = 256;
  std::uint64_t pq_seed = 17;
};

/// Single-writer accumulation of points and observations; build() freezes
/// into an immutable GlobalMap. Per-(point, word) descriptors keep a running
/// (sum, count) so averaging is order-independent.
class MapBuilder {
 public:
  explicit MapBuilder(int descriptor_dim = 128) : dim_(descriptor_dim) {}

  void add_point(std::uint64_t point_id, const Vec3& position);

  /// Adds one observation. Creates the point (at the origin) if it does not
  /// exist yet. Throws std::invalid_argument on dimension mismatch.
  void add_observation(std::uint64_t point_id, std::uint32_t word_id, const float* descriptor,
                       std::uint64_t frame_id);

  std::size_t point_count() const { return order_.size(); }

  GlobalMap build(Vocabulary vocabulary, const MapBuildOptions& opts = {}) const;

 private:
  struct Accum {
    Vec3 position = Vec3::Zero();
    std::map<std::uint32_t, std::pair<Eigen::VectorXd, std::int64_t>> word_sums;
    std::vector<std::uint64_t> frames;  // deduped at build
  };

  int dim_;
  std::unordered_map<std::uint64_t, Accum> points_;
  std::vector<std::uint64_t> order_;  // insertion order, for deterministic layout
};

}  // namespace mcloc
