#include "mcloc/io.hpp"

#include <fstream>
#include <sstream>

namespace mcloc::io {

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open file: " + path);
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open file for writing: " + path);
  return os;
}

nlohmann::json parse_file(const std::string& path) {
  auto is = open_in(path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + path + ": " + e.what());
  }
}

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

nlohmann::json vec3_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

std::string encode_floats(const float* data, std::size_t n) {
  return base64_encode(reinterpret_cast<const std::uint8_t*>(data), n * sizeof(float));
}

Eigen::VectorXf decode_floats(const std::string& text) {
  const std::vector<std::uint8_t> bytes = base64_decode(text);
  if (bytes.size() % sizeof(float) != 0)
    throw FormatError("descriptor byte count is not a multiple of 4");
  Eigen::VectorXf out(bytes.size() / sizeof(float));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace

std::string base64_encode(const std::uint8_t* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const std::uint32_t b0 = data[i];
    const std::uint32_t b1 = i + 1 < n ? data[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < n ? data[i + 2] : 0;
    const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out.push_back(kB64[(triple >> 18) & 0x3f]);
    out.push_back(kB64[(triple >> 12) & 0x3f]);
    out.push_back(i + 1 < n ? kB64[(triple >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < n ? kB64[triple & 0x3f] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  static const auto lut = [] {
    std::array<std::int8_t, 256> t;
    t.fill(-1);
    for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kB64[i])] = static_cast<std::int8_t>(i);
    return t;
  }();
  if (text.size() % 4 != 0) throw FormatError("base64 length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    std::uint32_t triple = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw FormatError("bad base64 padding");
        ++pad;
        triple <<= 6;
        continue;
      }
      const std::int8_t v = lut[static_cast<unsigned char>(c)];
      if (v < 0 || pad > 0) throw FormatError("bad base64 character");
      triple = (triple << 6) | static_cast<std::uint32_t>(v);
    }
    out.push_back(static_cast<std::uint8_t>((triple >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((triple >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(triple & 0xff));
  }
  return out;
}

nlohmann::json pose_to_json(const Pose& p) {
  return {{"q", {p.q.w(), p.q.x(), p.q.y(), p.q.z()}},
          {"t", vec3_to_json(p.t)}};
}

Pose pose_from_json(const nlohmann::json& j) {
  const auto& q = j.at("q");
  if (!q.is_array() || q.size() != 4) throw FormatError("pose q must be [w,x,y,z]");
  const Quat quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                  q[3].get<double>());
  if (std::abs(quat.norm() - 1.0) > 1e-6) throw FormatError("pose quaternion not unit norm");
  return Pose(quat, vec3_from_json(j.at("t")));
}

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + context);
  }
}

void save_rig(const CameraRig& rig, const std::string& path) {
  nlohmann::json cams = nlohmann::json::array();
  for (const RigCamera& c : rig.cameras()) {
    cams.push_back({{"camera_id", c.camera_id},
                    {"rig_from_camera", pose_to_json(c.rig_from_camera)},
                    {"fov_half_angle_deg", c.fov_half_angle * 180.0 / M_PI}});
  }
  auto os = open_out(path);
  os << nlohmann::json{{"cameras", cams}}.dump(2) << "\n";
}

CameraRig load_rig(const std::string& path) {
  const nlohmann::json j = parse_file(path);
  std::vector<RigCamera> cams;
  for (const auto& c : j.at("cameras")) {
    RigCamera rc;
    rc.camera_id = c.at("camera_id").get<int>();
    rc.rig_from_camera = pose_from_json(c.at("rig_from_camera"));
    rc.fov_half_angle = c.at("fov_half_angle_deg").get<double>() * M_PI / 180.0;
    cams.push_back(rc);
  }
  try {
    return CameraRig(cams);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid rig: ") + e.what());
  }
}

void save_query_frames(const std::vector<QueryFrame>& frames, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const QueryFrame& f : frames) {
    nlohmann::json cams = nlohmann::json::array();
    for (const CameraFeatures& c : f.cameras) {
      nlohmann::json feats = nlohmann::json::array();
      for (const BearingFeature& bf : c.features) {
        feats.push_back(
            {{"bearing", vec3_to_json(bf.bearing)},
             {"descriptor",
              encode_floats(f.descriptors.row(bf.descriptor_id).data(),
                            static_cast<std::size_t>(f.descriptors.cols()))}});
      }
      cams.push_back({{"camera_id", c.camera_id}, {"features", feats}});
    }
    arr.push_back(
        {{"frame_id", f.frame_id}, {"timestamp", f.timestamp}, {"cameras", cams}});
  }
  auto os = open_out(path);
  os << arr.dump() << "\n";
}

std::vector<QueryFrame> load_query_frames(const std::string& path) {
  const nlohmann::json arr = parse_file(path);
  if (!arr.is_array()) throw FormatError("query file must be a JSON array of frames");
  std::vector<QueryFrame> out;
  for (const auto& jf : arr) {
    QueryFrame f;
    f.frame_id = jf.at("frame_id").get<std::uint64_t>();
    f.timestamp = jf.value("timestamp", 0.0);

    std::vector<Eigen::VectorXf> rows;
    for (const auto& jc : jf.at("cameras")) {
      CameraFeatures cf;
      cf.camera_id = jc.at("camera_id").get<int>();
      for (const auto& jfe : jc.at("features")) {
        BearingFeature bf;
        bf.camera_id = cf.camera_id;
        bf.bearing = vec3_from_json(jfe.at("bearing"));
        const double n = bf.bearing.norm();
        if (std::abs(n - 1.0) > 1e-6) throw FormatError("feature bearing not unit norm");
        bf.bearing /= n;
        if (bf.bearing.z() <= 0.0)
          throw FormatError("feature bearing must point forward (z > 0)");
        bf.descriptor_id = static_cast<int>(rows.size());
        rows.push_back(decode_floats(jfe.at("descriptor").get<std::string>()));
        cf.features.push_back(bf);
      }
      f.cameras.push_back(std::move(cf));
    }
    if (!rows.empty()) {
      f.descriptors.resize(static_cast<Eigen::Index>(rows.size()), rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
          throw FormatError("inconsistent descriptor dimensions in frame");
        f.descriptors.row(static_cast<Eigen::Index>(i)) = rows[i];
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

void save_priors(const std::vector<PriorRecord>& priors, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const PriorRecord& p : priors) {
    arr.push_back({{"frame_id", p.frame_id},
                   {"position", vec3_to_json(p.prior.prior_pose.t)},
                   {"heading_quaternion",
                    {p.prior.prior_pose.q.w(), p.prior.prior_pose.q.x(),
                     p.prior.prior_pose.q.y(), p.prior.prior_pose.q.z()}},
                   {"position_radius_m", p.prior.position_radius},
                   {"heading_half_angle_deg", p.prior.heading_half_angle * 180.0 / M_PI}});
  }
  auto os = open_out(path);
  os << arr.dump(2) << "\n";
}

std::vector<PriorRecord> load_priors(const std::string& path) {
  const nlohmann::json arr = parse_file(path);
  if (!arr.is_array()) throw FormatError("prior file must be a JSON array");
  std::vector<PriorRecord> out;
  for (const auto& j : arr) {
    PriorRecord p;
    p.frame_id = j.at("frame_id").get<std::uint64_t>();
    const auto& q = j.at("heading_quaternion");
    p.prior.prior_pose =
        Pose(Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                  q[3].get<double>()),
             vec3_from_json(j.at("position")));
    p.prior.position_radius = j.at("position_radius_m").get<double>();
    p.prior.heading_half_angle = j.at("heading_half_angle_deg").get<double>() * M_PI / 180.0;
    out.push_back(p);
  }
  return out;
}

void save_odometry(const std::vector<OdometryIncrement>& incs, const std::string& path) {
  auto os = open_out(path);
  for (const OdometryIncrement& inc : incs) {
    nlohmann::json j = {{"t_from", inc.t_from},
                        {"t_to", inc.t_to},
                        {"delta", pose_to_json(inc.delta)},
                        {"sigma0_diag",
                         {inc.sigma0_diag[0], inc.sigma0_diag[1], inc.sigma0_diag[2],
                          inc.sigma0_diag[3], inc.sigma0_diag[4], inc.sigma0_diag[5]}}};
    os << j.dump() << "\n";
  }
}

std::vector<OdometryIncrement> load_odometry(const std::string& path) {
  auto is = open_in(path);
  std::vector<OdometryIncrement> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      OdometryIncrement inc;
      inc.t_from = j.at("t_from").get<double>();
      inc.t_to = j.at("t_to").get<double>();
      inc.delta = pose_from_json(j.at("delta"));
      const auto& sd = j.at("sigma0_diag");
      if (!sd.is_array() || sd.size() != 6)
        throw FormatError("sigma0_diag must have 6 entries");
      for (int i = 0; i < 6; ++i) inc.sigma0_diag[i] = sd[i].get<double>();
      out.push_back(inc);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed odometry line " + std::to_string(line_no) + " in " + path +
                        ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("malformed odometry line " + std::to_string(line_no) + " in " + path +
                        ": " + e.what());
    }
  }
  return out;
}

namespace {

nlohmann::json stats_to_json(const LocalizationStats& s, bool zero_wall_time) {
  nlohmann::json pc = nlohmann::json::array();
  for (std::uint64_t v : s.per_camera_matches) pc.push_back(v);
  return {{"features_total", s.features_total},
          {"features_processed", s.features_processed},
          {"matches_found", s.matches_found},
          {"ransac_iterations", s.ransac_iterations},
          {"descriptor_comparisons", s.descriptor_comparisons},
          {"candidate_comparisons", s.candidate_comparisons},
          {"batches", s.batches},
          {"wall_time_ms", zero_wall_time ? 0.0 : s.wall_time_ms},
          {"per_camera_matches", pc}};
}

LocalizationStats stats_from_json(const nlohmann::json& j) {
  LocalizationStats s;
  s.features_total = j.value("features_total", std::uint64_t(0));
  s.features_processed = j.value("features_processed", std::uint64_t(0));
  s.matches_found = j.value("matches_found", std::uint64_t(0));
  s.ransac_iterations = j.value("ransac_iterations", std::uint64_t(0));
  s.descriptor_comparisons = j.value("descriptor_comparisons", std::uint64_t(0));
  s.candidate_comparisons = j.value("candidate_comparisons", std::uint64_t(0));
  s.batches = j.value("batches", std::uint64_t(0));
  s.wall_time_ms = j.value("wall_time_ms", 0.0);
  if (j.contains("per_camera_matches"))
    for (const auto& v : j.at("per_camera_matches"))
      s.per_camera_matches.push_back(v.get<std::uint64_t>());
  return s;
}

}  // namespace

void save_results(const std::vector<LocalizationResult>& results, const std::string& path,
                  bool zero_wall_times) {
  auto os = open_out(path);
  for (const LocalizationResult& r : results) {
    nlohmann::json inliers = nlohmann::json::array();
    for (const Correspondence& c : r.inliers)
      inliers.push_back(
          {{"camera_id", c.camera_id}, {"feature", c.feature_index}, {"point_id", c.point_id}});
    nlohmann::json j = {
        {"frame_id", r.frame_id},
        {"timestamp", r.timestamp},
        {"status", r.status == LocalizationStatus::Localized ? "localized" : "failed"},
        {"pose", pose_to_json(r.pose)},
        {"inliers", inliers},
        {"stats", stats_to_json(r.stats, zero_wall_times)}};
    os << j.dump() << "\n";
  }
}

std::vector<ResultRecord> load_results(const std::string& path) {
  auto is = open_in(path);
  std::vector<ResultRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      ResultRecord r;
      r.frame_id = j.at("frame_id").get<std::uint64_t>();
      r.timestamp = j.value("timestamp", 0.0);
      r.localized = j.at("status").get<std::string>() == "localized";
      r.pose = pose_from_json(j.at("pose"));
      for (const auto& ji : j.at("inliers"))
        r.inliers.push_back({ji.at("camera_id").get<int>(), ji.at("feature").get<int>(),
                             ji.at("point_id").get<std::uint64_t>()});
      r.stats = stats_from_json(j.at("stats"));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed result line " + std::to_string(line_no) + " in " + path +
                        ": " + e.what());
    }
  }
  return out;
}

void save_trajectory(const std::vector<std::pair<double, Pose>>& traj,
                     const std::string& path) {
  auto os = open_out(path);
  for (const auto& [t, pose] : traj) {
    nlohmann::json j = {{"timestamp", t}, {"pose", pose_to_json(pose)}};
    os << j.dump() << "\n";
  }
}

std::vector<std::pair<double, Pose>> load_trajectory(const std::string& path) {
  auto is = open_in(path);
  std::vector<std::pair<double, Pose>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      out.emplace_back(j.at("timestamp").get<double>(), pose_from_json(j.at("pose")));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed trajectory line " + std::to_string(line_no) + " in " + path +
                        ": " + e.what());
    }
  }
  return out;
}

void save_ground_truth(const std::vector<sim::TimedPose>& poses, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : poses)
    arr.push_back({{"frame_id", p.frame_id},
                   {"timestamp", p.timestamp},
                   {"pose", pose_to_json(p.pose)}});
  auto os = open_out(path);
  os << arr.dump() << "\n";
}

std::vector<sim::TimedPose> load_ground_truth(const std::string& path) {
  const nlohmann::json arr = parse_file(path);
  if (!arr.is_array()) throw FormatError("ground truth must be a JSON array");
  std::vector<sim::TimedPose> out;
  for (const auto& j : arr) {
    sim::TimedPose p;
    p.frame_id = j.at("frame_id").get<std::uint64_t>();
    p.timestamp = j.at("timestamp").get<double>();
    p.pose = pose_from_json(j.at("pose"));
    out.push_back(p);
  }
  return out;
}

std::vector<MapSourcePoint> load_map_source(const std::string& path) {
  const nlohmann::json arr = parse_file(path);
  if (!arr.is_array()) throw FormatError("map source must be a JSON array of points");
  std::vector<MapSourcePoint> out;
  for (const auto& j : arr) {
    MapSourcePoint p;
    p.point_id = j.at("point_id").get<std::uint64_t>();
    p.position = vec3_from_json(j.at("position"));
    for (const auto& jo : j.at("observations")) {
      MapSourcePoint::Obs o;
      o.frame_id = jo.at("frame_id").get<std::uint64_t>();
      const auto& d = jo.at("descriptor");
      if (d.is_string()) {
        o.descriptor = decode_floats(d.get<std::string>());
      } else if (d.is_array()) {
        o.descriptor.resize(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
          o.descriptor[static_cast<Eigen::Index>(i)] = d[i].get<float>();
      } else {
        throw FormatError("descriptor must be base64 text or a number array");
      }
      p.observations.push_back(std::move(o));
    }
    if (p.observations.empty()) throw FormatError("map source point without observations");
    out.push_back(std::move(p));
  }
  return out;
}

void save_map_source(const std::vector<MapSourcePoint>& points, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& o : p.observations)
      obs.push_back({{"frame_id", o.frame_id},
                     {"descriptor",
                      encode_floats(o.descriptor.data(),
                                    static_cast<std::size_t>(o.descriptor.size()))}});
    arr.push_back({{"point_id", p.point_id},
                   {"position", vec3_to_json(p.position)},
                   {"observations", obs}});
  }
  auto os = open_out(path);
  os << arr.dump() << "\n";
}

}  // namespace mcloc::io
