#include "mcloc/mapstore.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>
#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "map container is defined little-endian");

namespace mcloc {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'L', 'M', 'A', 'P', '0', '1'};

class CrcWriter {
 public:
  explicit CrcWriter(std::ostream& os) : os_(os), crc_(crc32(0L, Z_NULL, 0)) {}

  void write(const void* data, std::size_t n) {
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    const auto* p = static_cast<const Bytef*>(data);
    while (n > 0) {
      const std::size_t chunk = std::min<std::size_t>(n, 1u << 30);
      crc_ = crc32(crc_, p, static_cast<uInt>(chunk));
      p += chunk;
      n -= chunk;
    }
  }

  template <typename T>
  void pod(const T& v) {
    write(&v, sizeof(T));
  }

  std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }

 private:
  std::ostream& os_;
  uLong crc_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  const char* take(std::size_t n) {
    if (pos_ + n > size_) throw MapFormatError("map file truncated");
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t GlobalMap::index_of(std::uint64_t point_id) const {
  auto it = id_to_index_.find(point_id);
  if (it == id_to_index_.end()) throw UnknownPointError("unknown point id");
  return it->second;
}

bool GlobalMap::has_point(std::uint64_t point_id) const {
  return id_to_index_.count(point_id) > 0;
}

const std::vector<std::uint32_t>& GlobalMap::word_entries(std::uint32_t word_id) const {
  static const std::vector<std::uint32_t> empty;
  if (word_id >= word_index_.size()) return empty;
  return word_index_[word_id];
}

double GlobalMap::entry_distance(const float* query, std::uint32_t entry) const {
  if (pq_) return pq_distance(*pq_, query, entry_codes_.row(entry).data());
  return std::sqrt(
      static_cast<double>(kernels::sq_dist(query, entry_descriptors_.row(entry).data(),
                                           vocab_.dim())));
}

Eigen::VectorXf GlobalMap::entry_descriptor(std::uint32_t entry) const {
  if (pq_) return pq_reconstruct(*pq_, entry_codes_.row(entry).data());
  return entry_descriptors_.row(entry);
}

const std::uint64_t* GlobalMap::point_frames(std::uint32_t point_index,
                                             std::uint32_t* count) const {
  const MapPoint& p = points_[point_index];
  *count = p.frame_count;
  return frame_ids_.data() + p.frame_begin;
}

bool GlobalMap::frames_intersect(std::uint32_t a, std::uint32_t b) const {
  const MapPoint& pa = points_[a];
  const MapPoint& pb = points_[b];
  const std::uint64_t* fa = frame_ids_.data() + pa.frame_begin;
  const std::uint64_t* fb = frame_ids_.data() + pb.frame_begin;
  std::uint32_t i = 0, j = 0;
  while (i < pa.frame_count && j < pb.frame_count) {
    if (fa[i] == fb[j]) return true;
    if (fa[i] < fb[j])
      ++i;
    else
      ++j;
  }
  return false;
}

const std::vector<std::uint32_t>& GlobalMap::frame_points(std::uint64_t frame_id) const {
  static const std::vector<std::uint32_t> empty;
  auto it = frame_index_.find(frame_id);
  return it == frame_index_.end() ? empty : it->second;
}

std::vector<std::uint32_t> GlobalMap::covisible_indices(std::uint32_t point_index) const {
  const MapPoint& p = points_[point_index];
  std::vector<std::uint32_t> out;
  for (std::uint32_t f = 0; f < p.frame_count; ++f) {
    const auto& pts = frame_points(frame_ids_[p.frame_begin + f]);
    out.insert(out.end(), pts.begin(), pts.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  out.erase(std::remove(out.begin(), out.end(), point_index), out.end());
  return out;
}

std::vector<std::uint64_t> GlobalMap::covisible_points(std::uint64_t point_id) const {
  const std::uint32_t idx = index_of(point_id);
  std::vector<std::uint64_t> out;
  for (std::uint32_t i : covisible_indices(idx)) out.push_back(points_[i].point_id);
  return out;
}

void GlobalMap::rebuild_derived() {
  const std::size_t entries = entry_word_ids_.size();
  entry_point_.assign(entries, 0);
  id_to_index_.clear();
  frame_index_.clear();
  word_index_.assign(vocab_.word_count(), {});

  for (std::uint32_t pi = 0; pi < points_.size(); ++pi) {
    const MapPoint& p = points_[pi];
    if (id_to_index_.count(p.point_id)) throw MapFormatError("duplicate point id");
    id_to_index_[p.point_id] = pi;
    for (std::uint32_t e = p.entry_begin; e < p.entry_begin + p.entry_count; ++e) {
      if (e >= entries) throw MapFormatError("entry range out of bounds");
      entry_point_[e] = pi;
      const std::uint32_t w = entry_word_ids_[e];
      if (w >= word_index_.size()) throw MapFormatError("word id out of range");
      word_index_[w].push_back(e);
    }
    for (std::uint32_t f = p.frame_begin; f < p.frame_begin + p.frame_count; ++f) {
      if (f >= frame_ids_.size()) throw MapFormatError("frame range out of bounds");
      frame_index_[frame_ids_[f]].push_back(pi);
    }
  }
}

void GlobalMap::check_consistency() const {
  std::size_t indexed = 0;
  for (std::uint32_t w = 0; w < word_index_.size(); ++w) {
    for (std::uint32_t e : word_index_[w]) {
      if (entry_word_ids_[e] != w) throw MapFormatError("inverted index mismatch");
      const MapPoint& p = points_[entry_point_[e]];
      if (e < p.entry_begin || e >= p.entry_begin + p.entry_count)
        throw MapFormatError("entry not inside its point range");
      ++indexed;
    }
  }
  if (indexed != entry_word_ids_.size())
    throw MapFormatError("inverted index does not cover all entries");

  std::size_t entry_cursor = 0, frame_cursor = 0;
  for (const MapPoint& p : points_) {
    if (p.entry_count == 0) throw MapFormatError("point without word entries");
    if (p.frame_count == 0) throw MapFormatError("point without observing frames");
    if (p.entry_begin != entry_cursor || p.frame_begin != frame_cursor)
      throw MapFormatError("point ranges are not contiguous");
    entry_cursor += p.entry_count;
    frame_cursor += p.frame_count;
    for (std::uint32_t f = p.frame_begin + 1; f < p.frame_begin + p.frame_count; ++f)
      if (frame_ids_[f - 1] >= frame_ids_[f])
        throw MapFormatError("frame ids not sorted unique");
  }
  if (entry_cursor != entry_word_ids_.size() || frame_cursor != frame_ids_.size())
    throw MapFormatError("dangling entries or frames");

  if (!pq_) {
    for (Eigen::Index e = 0; e < entry_descriptors_.rows(); ++e) {
      const float n = entry_descriptors_.row(e).norm();
      if (std::abs(n - 1.0f) > 1e-5f) throw MapFormatError("entry descriptor not unit norm");
    }
  }
}

bool GlobalMap::deep_equal(const GlobalMap& other) const {
  auto mat_eq = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.rows() == 0 || std::memcmp(a.data(), b.data(),
                                         sizeof(*a.data()) * a.size()) == 0);
  };
  if (!mat_eq(vocab_.words, other.vocab_.words)) return false;
  if (pq_.has_value() != other.pq_.has_value()) return false;
  if (pq_) {
    if (pq_->M != other.pq_->M || pq_->K != other.pq_->K || pq_->dim != other.pq_->dim)
      return false;
    if (!mat_eq(pq_->centroids, other.pq_->centroids)) return false;
    if (!mat_eq(entry_codes_, other.entry_codes_)) return false;
  } else {
    if (!mat_eq(entry_descriptors_, other.entry_descriptors_)) return false;
  }
  if (points_.size() != other.points_.size()) return false;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const MapPoint& a = points_[i];
    const MapPoint& b = other.points_[i];
    if (a.point_id != b.point_id || a.position != b.position ||
        a.entry_begin != b.entry_begin || a.entry_count != b.entry_count ||
        a.frame_begin != b.frame_begin || a.frame_count != b.frame_count)
      return false;
  }
  return entry_word_ids_ == other.entry_word_ids_ && frame_ids_ == other.frame_ids_;
}

void GlobalMap::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open map file for writing: " + path);
  CrcWriter w(os);
  w.write(kMagic, sizeof(kMagic));

  nlohmann::json header = {
      {"descriptor_dim", vocab_.dim()},
      {"word_count", vocab_.word_count()},
      {"point_count", points_.size()},
      {"pq",
       {{"enabled", pq_.has_value()},
        {"M", pq_ ? pq_->M : 0},
        {"K", pq_ ? pq_->K : 0}}},
      {"endianness", "little"},
  };
  const std::string hs = header.dump();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(hs.size()));
  w.write(hs.data(), hs.size());

  w.write(vocab_.words.data(), sizeof(float) * vocab_.words.size());
  if (pq_) w.write(pq_->centroids.data(), sizeof(float) * pq_->centroids.size());

  for (const MapPoint& p : points_) {
    w.pod<std::uint64_t>(p.point_id);
    const double pos[3] = {p.position.x(), p.position.y(), p.position.z()};
    w.write(pos, sizeof(pos));
    w.pod<std::uint32_t>(p.entry_count);
    w.pod<std::uint32_t>(p.frame_count);
  }
  for (std::size_t e = 0; e < entry_word_ids_.size(); ++e) {
    w.pod<std::uint32_t>(entry_word_ids_[e]);
    if (pq_)
      w.write(entry_codes_.row(static_cast<Eigen::Index>(e)).data(),
              static_cast<std::size_t>(pq_->M));
    else
      w.write(entry_descriptors_.row(static_cast<Eigen::Index>(e)).data(),
              sizeof(float) * vocab_.dim());
  }
  w.write(frame_ids_.data(), sizeof(std::uint64_t) * frame_ids_.size());
  const std::uint32_t crc = w.crc();
  os.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  if (!os) throw std::runtime_error("failed writing map file: " + path);
}

GlobalMap GlobalMap::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open map file: " + path);
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  if (blob.size() < sizeof(kMagic) + sizeof(std::uint32_t))
    throw MapFormatError("map file truncated");
  if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
    throw MapFormatError("bad magic; not a map file or unsupported version");

  const std::size_t payload = blob.size() - sizeof(std::uint32_t);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, blob.data() + payload, sizeof(stored_crc));
  uLong crc = crc32(0L, Z_NULL, 0);
  {
    const auto* p = reinterpret_cast<const Bytef*>(blob.data());
    std::size_t n = payload;
    while (n > 0) {
      const std::size_t chunk = std::min<std::size_t>(n, 1u << 30);
      crc = crc32(crc, p, static_cast<uInt>(chunk));
      p += chunk;
      n -= chunk;
    }
  }
  if (static_cast<std::uint32_t>(crc) != stored_crc)
    throw MapFormatError("map checksum mismatch");

  Reader r(blob.data(), payload);
  r.take(sizeof(kMagic));
  const auto header_len = r.pod<std::uint32_t>();
  nlohmann::json header;
  try {
    const char* hp = r.take(header_len);
    header = nlohmann::json::parse(hp, hp + header_len);
  } catch (const nlohmann::json::exception&) {
    throw MapFormatError("unparsable map header");
  }
  if (header.value("endianness", "") != std::string("little"))
    throw MapFormatError("unsupported endianness");
  const int dim = header.at("descriptor_dim").get<int>();
  const int words = header.at("word_count").get<int>();
  const std::size_t n_points = header.at("point_count").get<std::size_t>();
  const bool pq_enabled = header.at("pq").at("enabled").get<bool>();
  if (dim <= 0 || words <= 0) throw MapFormatError("invalid header dimensions");

  GlobalMap m;
  m.vocab_.words.resize(words, dim);
  std::memcpy(m.vocab_.words.data(), r.take(sizeof(float) * std::size_t(words) * dim),
              sizeof(float) * std::size_t(words) * dim);

  if (pq_enabled) {
    PQCodebook cb;
    cb.M = header.at("pq").at("M").get<int>();
    cb.K = header.at("pq").at("K").get<int>();
    cb.dim = dim;
    if (cb.M <= 0 || cb.K <= 0 || dim % cb.M != 0) throw MapFormatError("invalid pq header");
    cb.centroids.resize(static_cast<Eigen::Index>(cb.M) * cb.K, dim / cb.M);
    std::memcpy(cb.centroids.data(),
                r.take(sizeof(float) * static_cast<std::size_t>(cb.centroids.size())),
                sizeof(float) * static_cast<std::size_t>(cb.centroids.size()));
    m.pq_ = std::move(cb);
  }

  m.points_.resize(n_points);
  std::size_t total_entries = 0, total_frames = 0;
  for (std::size_t i = 0; i < n_points; ++i) {
    MapPoint& p = m.points_[i];
    p.point_id = r.pod<std::uint64_t>();
    double pos[3];
    std::memcpy(pos, r.take(sizeof(pos)), sizeof(pos));
    p.position = Vec3(pos[0], pos[1], pos[2]);
    p.entry_count = r.pod<std::uint32_t>();
    p.frame_count = r.pod<std::uint32_t>();
    p.entry_begin = static_cast<std::uint32_t>(total_entries);
    p.frame_begin = static_cast<std::uint32_t>(total_frames);
    total_entries += p.entry_count;
    total_frames += p.frame_count;
  }

  m.entry_word_ids_.resize(total_entries);
  if (pq_enabled)
    m.entry_codes_.resize(static_cast<Eigen::Index>(total_entries), m.pq_->M);
  else
    m.entry_descriptors_.resize(static_cast<Eigen::Index>(total_entries), dim);
  for (std::size_t e = 0; e < total_entries; ++e) {
    m.entry_word_ids_[e] = r.pod<std::uint32_t>();
    if (pq_enabled)
      std::memcpy(m.entry_codes_.row(static_cast<Eigen::Index>(e)).data(),
                  r.take(static_cast<std::size_t>(m.pq_->M)),
                  static_cast<std::size_t>(m.pq_->M));
    else
      std::memcpy(m.entry_descriptors_.row(static_cast<Eigen::Index>(e)).data(),
                  r.take(sizeof(float) * dim), sizeof(float) * dim);
  }

  m.frame_ids_.resize(total_frames);
  if (total_frames > 0)
    std::memcpy(m.frame_ids_.data(), r.take(sizeof(std::uint64_t) * total_frames),
                sizeof(std::uint64_t) * total_frames);
  if (r.remaining() != 0) throw MapFormatError("trailing bytes in map file");

  m.rebuild_derived();
  return m;
}

void MapBuilder::add_point(std::uint64_t point_id, const Vec3& position) {
  auto [it, inserted] = points_.try_emplace(point_id);
  it->second.position = position;
  if (inserted) order_.push_back(point_id);
}

void MapBuilder::add_observation(std::uint64_t point_id, std::uint32_t word_id,
                                 const float* descriptor, std::uint64_t frame_id) {
  auto [it, inserted] = points_.try_emplace(point_id);
  if (inserted) order_.push_back(point_id);
  Accum& a = it->second;
  auto [wit, fresh] = a.word_sums.try_emplace(word_id);
  if (fresh) {
    wit->second.first = Eigen::VectorXd::Zero(dim_);
    wit->second.second = 0;
  }
  wit->second.first += Eigen::Map<const Eigen::VectorXf>(descriptor, dim_).cast<double>();
  wit->second.second += 1;
  a.frames.push_back(frame_id);
}

GlobalMap MapBuilder::build(Vocabulary vocabulary, const MapBuildOptions& opts) const {
  if (vocabulary.dim() != dim_)
    throw std::invalid_argument("vocabulary dimension does not match builder");

  GlobalMap m;
  m.vocab_ = std::move(vocabulary);
  const std::uint32_t word_count = static_cast<std::uint32_t>(m.vocab_.word_count());

  std::size_t total_entries = 0;
  for (std::uint64_t id : order_) total_entries += points_.at(id).word_sums.size();

  m.points_.reserve(order_.size());
  m.entry_word_ids_.reserve(total_entries);
  m.entry_descriptors_.resize(static_cast<Eigen::Index>(total_entries), dim_);

  for (std::uint64_t id : order_) {
    const Accum& a = points_.at(id);
    if (a.word_sums.empty())
      throw std::invalid_argument("point " + std::to_string(id) + " has no observations");

    MapPoint p;
    p.point_id = id;
    p.position = a.position;
    p.entry_begin = static_cast<std::uint32_t>(m.entry_word_ids_.size());
    p.frame_begin = static_cast<std::uint32_t>(m.frame_ids_.size());

    for (const auto& [word, sum_count] : a.word_sums) {
      if (word >= word_count) throw std::invalid_argument("word id out of vocabulary range");
      Eigen::VectorXd mean = sum_count.first / static_cast<double>(sum_count.second);
      const double n = mean.norm();
      if (n <= 0.0) throw std::invalid_argument("averaged descriptor has zero norm");
      m.entry_descriptors_.row(static_cast<Eigen::Index>(m.entry_word_ids_.size())) =
          (mean / n).cast<float>();
      m.entry_word_ids_.push_back(word);
    }

    std::vector<std::uint64_t> frames = a.frames;
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    m.frame_ids_.insert(m.frame_ids_.end(), frames.begin(), frames.end());

    p.entry_count = static_cast<std::uint32_t>(m.entry_word_ids_.size()) - p.entry_begin;
    p.frame_count = static_cast<std::uint32_t>(m.frame_ids_.size()) - p.frame_begin;
    m.points_.push_back(p);
  }

  if (opts.use_pq) {
    PQCodebook cb = pq_train(m.entry_descriptors_, opts.pq_m, opts.pq_k, opts.pq_seed);
    m.entry_codes_ = pq_encode_all(cb, m.entry_descriptors_);
    m.entry_descriptors_.resize(0, 0);
    m.pq_ = std::move(cb);
  }

  m.rebuild_derived();
  return m;
}

}  // namespace mcloc
