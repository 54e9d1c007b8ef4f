// mcloc: multi-camera visual localization toolkit CLI.
//
// Subcommands: simulate | build-map | localize | fuse | benchmark.
// Exit codes: 0 success, 1 runtime failure, 2 configuration/input error.

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>

#include "mcloc/io.hpp"
#include "mcloc/log.hpp"
#include "mcloc/random.hpp"
#include "mcloc/reference.hpp"

namespace fs = std::filesystem;
using namespace mcloc;

namespace {

struct CommonOpts {
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware default
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--seed", opts->seed, "master random seed");
  cmd->add_option("--threads", opts->threads, "worker thread cap (0 = all cores)");
  cmd->add_flag("--deterministic", opts->deterministic,
                "bit-reproducible mode (forces a single thread)");
}

int effective_threads(const CommonOpts& opts) {
  if (opts.deterministic) return 1;
  if (opts.threads > 0) return opts.threads;
  return omp_get_max_threads();
}

void require_input(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw io::ConfigError(what + " file does not exist: " + path);
}

// ---------------------------------------------------------------------------
// simulate

struct SimConfig {
  sim::SceneSpec scene;
  sim::TrajectorySpec trajectory;
  int query_every = 1;
  int rig_cameras = 4;
  double rig_fov_half_angle_deg = 50.0;
  double rig_lever_arm = 0.5;
  sim::OdometrySpec odometry{0.01, 0.001, 0.005, 0};
  double prior_position_noise_m = 10.0;
  double prior_heading_noise_deg = 5.0;
  double prior_radius_m = 50.0;
  double prior_half_angle_deg = 10.0;
  int map_words = 1024;
  int map_training_cap = 25000;
  bool map_use_pq = false;
  int pq_m = 8;
  int pq_k = 256;
};

SimConfig parse_sim_config(const nlohmann::json& j) {
  SimConfig c;
  io::reject_unknown_keys(
      j, {"scene", "trajectory", "query_every", "rig", "odometry", "priors", "map", "seed"},
      "simulate config");
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    io::reject_unknown_keys(
        s,
        {"point_count", "extent", "cell_size", "coverage_factor", "max_obs_per_frame",
         "descriptor_noise", "outlier_fraction", "bearing_noise_deg", "descriptor_dim",
         "max_features_per_camera", "min_range", "max_range"},
        "scene");
    c.scene.point_count = s.value("point_count", c.scene.point_count);
    if (s.contains("extent")) {
      const auto& e = s.at("extent");
      c.scene.extent = Vec3(e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>());
    }
    c.scene.cell_size = s.value("cell_size", c.scene.cell_size);
    c.scene.coverage_factor = s.value("coverage_factor", c.scene.coverage_factor);
    c.scene.max_obs_per_frame = s.value("max_obs_per_frame", c.scene.max_obs_per_frame);
    c.scene.descriptor_noise = s.value("descriptor_noise", c.scene.descriptor_noise);
    c.scene.outlier_fraction = s.value("outlier_fraction", c.scene.outlier_fraction);
    c.scene.bearing_noise_deg = s.value("bearing_noise_deg", c.scene.bearing_noise_deg);
    c.scene.descriptor_dim = s.value("descriptor_dim", c.scene.descriptor_dim);
    c.scene.max_features_per_camera =
        s.value("max_features_per_camera", c.scene.max_features_per_camera);
    c.scene.min_range = s.value("min_range", c.scene.min_range);
    c.scene.max_range = s.value("max_range", c.scene.max_range);
  }
  if (j.contains("trajectory")) {
    const auto& t = j.at("trajectory");
    io::reject_unknown_keys(t, {"shape", "steps", "step_length", "dt", "height"}, "trajectory");
    const std::string shape = t.value("shape", std::string("circle"));
    if (shape == "circle")
      c.trajectory.shape = sim::TrajectorySpec::Shape::Circle;
    else if (shape == "line")
      c.trajectory.shape = sim::TrajectorySpec::Shape::Line;
    else
      throw io::ConfigError("trajectory shape must be 'circle' or 'line'");
    c.trajectory.steps = t.value("steps", c.trajectory.steps);
    c.trajectory.step_length = t.value("step_length", c.trajectory.step_length);
    c.trajectory.dt = t.value("dt", c.trajectory.dt);
    c.trajectory.height = t.value("height", c.trajectory.height);
  }
  c.query_every = j.value("query_every", c.query_every);
  if (j.contains("rig")) {
    const auto& r = j.at("rig");
    io::reject_unknown_keys(r, {"cameras", "fov_half_angle_deg", "lever_arm"}, "rig");
    c.rig_cameras = r.value("cameras", c.rig_cameras);
    c.rig_fov_half_angle_deg = r.value("fov_half_angle_deg", c.rig_fov_half_angle_deg);
    c.rig_lever_arm = r.value("lever_arm", c.rig_lever_arm);
  }
  if (j.contains("odometry")) {
    const auto& o = j.at("odometry");
    io::reject_unknown_keys(o, {"drift_per_meter", "rot_noise_rad", "trans_noise_m"},
                            "odometry");
    c.odometry.drift_per_meter = o.value("drift_per_meter", c.odometry.drift_per_meter);
    c.odometry.rot_noise_rad = o.value("rot_noise_rad", c.odometry.rot_noise_rad);
    c.odometry.trans_noise_m = o.value("trans_noise_m", c.odometry.trans_noise_m);
  }
  if (j.contains("priors")) {
    const auto& p = j.at("priors");
    io::reject_unknown_keys(
        p, {"position_noise_m", "heading_noise_deg", "radius_m", "half_angle_deg"}, "priors");
    c.prior_position_noise_m = p.value("position_noise_m", c.prior_position_noise_m);
    c.prior_heading_noise_deg = p.value("heading_noise_deg", c.prior_heading_noise_deg);
    c.prior_radius_m = p.value("radius_m", c.prior_radius_m);
    c.prior_half_angle_deg = p.value("half_angle_deg", c.prior_half_angle_deg);
  }
  if (j.contains("map")) {
    const auto& m = j.at("map");
    io::reject_unknown_keys(m, {"words", "training_cap", "use_pq", "pq_m", "pq_k"}, "map");
    c.map_words = m.value("words", c.map_words);
    c.map_training_cap = m.value("training_cap", c.map_training_cap);
    c.map_use_pq = m.value("use_pq", c.map_use_pq);
    c.pq_m = m.value("pq_m", c.pq_m);
    c.pq_k = m.value("pq_k", c.pq_k);
  }
  return c;
}

nlohmann::json sim_config_to_json(const SimConfig& c, std::uint64_t seed) {
  return {
      {"seed", seed},
      {"scene",
       {{"point_count", c.scene.point_count},
        {"extent", {c.scene.extent.x(), c.scene.extent.y(), c.scene.extent.z()}},
        {"cell_size", c.scene.cell_size},
        {"coverage_factor", c.scene.coverage_factor},
        {"max_obs_per_frame", c.scene.max_obs_per_frame},
        {"descriptor_noise", c.scene.descriptor_noise},
        {"outlier_fraction", c.scene.outlier_fraction},
        {"bearing_noise_deg", c.scene.bearing_noise_deg},
        {"descriptor_dim", c.scene.descriptor_dim},
        {"max_features_per_camera", c.scene.max_features_per_camera},
        {"min_range", c.scene.min_range},
        {"max_range", c.scene.max_range}}},
      {"trajectory",
       {{"shape", c.trajectory.shape == sim::TrajectorySpec::Shape::Circle ? "circle" : "line"},
        {"steps", c.trajectory.steps},
        {"step_length", c.trajectory.step_length},
        {"dt", c.trajectory.dt},
        {"height", c.trajectory.height}}},
      {"query_every", c.query_every},
      {"rig",
       {{"cameras", c.rig_cameras},
        {"fov_half_angle_deg", c.rig_fov_half_angle_deg},
        {"lever_arm", c.rig_lever_arm}}},
      {"odometry",
       {{"drift_per_meter", c.odometry.drift_per_meter},
        {"rot_noise_rad", c.odometry.rot_noise_rad},
        {"trans_noise_m", c.odometry.trans_noise_m}}},
      {"priors",
       {{"position_noise_m", c.prior_position_noise_m},
        {"heading_noise_deg", c.prior_heading_noise_deg},
        {"radius_m", c.prior_radius_m},
        {"half_angle_deg", c.prior_half_angle_deg}}},
      {"map",
       {{"words", c.map_words},
        {"training_cap", c.map_training_cap},
        {"use_pq", c.map_use_pq},
        {"pq_m", c.pq_m},
        {"pq_k", c.pq_k}}},
  };
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 const CommonOpts& common) {
  SimConfig cfg;
  std::uint64_t seed = common.seed;
  if (!config_path.empty()) {
    require_input(config_path, "config");
    std::ifstream is(config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw io::ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg = parse_sim_config(j);
    if (j.contains("seed") && common.seed == 1) seed = j.at("seed").get<std::uint64_t>();
  }
  cfg.scene.seed = seed;
  cfg.odometry.seed = derive_seed(seed, 0x6f646fULL);
  omp_set_num_threads(effective_threads(common));

  fs::create_directories(out_dir);
  MCLOC_LOG_INFO("generating scene with %d points", cfg.scene.point_count);
  const sim::Scene scene = sim::generate_scene(cfg.scene);

  sim::SceneMapOptions mo;
  mo.word_count = cfg.map_words;
  mo.vocab_seed = derive_seed(seed, 0x766f63ULL);
  mo.vocab_training_cap = cfg.map_training_cap;
  mo.use_pq = cfg.map_use_pq;
  mo.pq_m = cfg.pq_m;
  mo.pq_k = cfg.pq_k;
  MCLOC_LOG_INFO("building map (%d words)", cfg.map_words);
  const GlobalMap map = sim::build_scene_map(scene, mo);

  const CameraRig rig =
      sim::make_default_rig(cfg.rig_cameras, cfg.rig_fov_half_angle_deg, cfg.rig_lever_arm);
  const auto trajectory = sim::make_trajectory(cfg.trajectory, cfg.scene.extent);

  std::vector<int> query_steps;
  for (int i = 0; i < static_cast<int>(trajectory.size()); i += cfg.query_every)
    query_steps.push_back(i);

  std::vector<QueryFrame> queries(query_steps.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t qi = 0; qi < static_cast<std::int64_t>(query_steps.size()); ++qi) {
    const auto& tp = trajectory[query_steps[qi]];
    queries[qi] = sim::render_frame(scene, rig, tp.pose, tp.frame_id, tp.timestamp).frame;
  }

  std::vector<io::PriorRecord> priors;
  {
    auto rng = make_rng(seed, 0x7072696fULL);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 2.0 * M_PI);
    for (int step : query_steps) {
      const auto& tp = trajectory[step];
      io::PriorRecord pr;
      pr.frame_id = tp.frame_id;
      pr.prior.position_radius = cfg.prior_radius_m;
      pr.prior.heading_half_angle = cfg.prior_half_angle_deg * M_PI / 180.0;
      // heading deviation about the vertical axis and an offset in the ground
      // plane, both clamped inside the advertised bounds
      double heading = g(rng) * cfg.prior_heading_noise_deg * M_PI / 180.0;
      heading = std::clamp(heading, -0.95 * pr.prior.heading_half_angle,
                           0.95 * pr.prior.heading_half_angle);
      double offset = std::abs(g(rng)) * cfg.prior_position_noise_m;
      offset = std::min(offset, 0.95 * pr.prior.position_radius);
      const double dir = u(rng);
      pr.prior.prior_pose =
          Pose(Quat(Eigen::AngleAxisd(heading, Vec3::UnitZ())) * tp.pose.q,
               tp.pose.t + offset * Vec3(std::cos(dir), std::sin(dir), 0.0));
      priors.push_back(pr);
    }
  }

  const auto odometry = sim::simulate_odometry(trajectory, cfg.odometry);

  map.save(out_dir + "/map.mclmap");
  io::save_query_frames(queries, out_dir + "/queries.json");
  io::save_odometry(odometry, out_dir + "/odometry.jsonl");
  {
    std::ofstream os(out_dir + "/scene.json");
    os << sim_config_to_json(cfg, seed).dump(2) << "\n";
  }
  io::save_rig(rig, out_dir + "/rig.json");
  io::save_ground_truth(trajectory, out_dir + "/groundtruth.json");
  io::save_priors(priors, out_dir + "/priors.json");

  std::cout << "simulate: " << scene.points.size() << " points, " << map.entry_count()
            << " map entries, " << queries.size() << " query frames, " << odometry.size()
            << " odometry steps -> " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// build-map

int cmd_build_map(const std::string& input, const std::string& out, int words, bool use_pq,
                  int pq_m, int pq_k, int training_cap, const CommonOpts& common) {
  require_input(input, "map source");
  omp_set_num_threads(effective_threads(common));
  const auto source = io::load_map_source(input);
  if (source.empty()) throw io::ConfigError("map source contains no points");

  const int dim = static_cast<int>(source.front().observations.front().descriptor.size());
  std::size_t total_obs = 0;
  for (const auto& p : source) total_obs += p.observations.size();

  const std::size_t cap = std::max<std::size_t>(words, training_cap);
  const std::size_t stride = std::max<std::size_t>(1, total_obs / cap);
  std::vector<const Eigen::VectorXf*> train_refs;
  std::size_t k = 0;
  for (const auto& p : source)
    for (const auto& o : p.observations) {
      if (o.descriptor.size() != dim)
        throw io::FormatError("inconsistent descriptor dimensions in map source");
      if (k++ % stride == 0) train_refs.push_back(&o.descriptor);
    }
  DescMatrix training(train_refs.size(), dim);
  for (std::size_t i = 0; i < train_refs.size(); ++i) {
    training.row(static_cast<Eigen::Index>(i)) = *train_refs[i];
    const float n = training.row(static_cast<Eigen::Index>(i)).norm();
    if (n > 0) training.row(static_cast<Eigen::Index>(i)) /= n;
  }

  const Vocabulary vocab =
      build_vocabulary(training, words, derive_seed(common.seed, 0x766fULL));

  MapBuilder builder(dim);
  for (const auto& p : source) builder.add_point(p.point_id, p.position);
  for (const auto& p : source)
    for (const auto& o : p.observations) {
      Eigen::VectorXf d = o.descriptor;
      const float n = d.norm();
      if (n <= 0) throw io::FormatError("zero-norm descriptor in map source");
      d /= n;
      builder.add_observation(p.point_id, assign_word(vocab, d.data()), d.data(), o.frame_id);
    }

  MapBuildOptions mb;
  mb.use_pq = use_pq;
  mb.pq_m = pq_m;
  mb.pq_k = pq_k;
  mb.pq_seed = derive_seed(common.seed, 0x7071ULL);
  const GlobalMap map = builder.build(vocab, mb);
  map.save(out);
  std::cout << "build-map: " << map.point_count() << " points, " << map.entry_count()
            << " entries, " << words << " words -> " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeOpts {
  std::string map_path, queries_path, rig_path, priors_path, out_path;
  double ratio_forward = 0.9;
  double ratio_backward = 0.9;
  std::string ratio_preset;
  double alpha_deg = 1.0;
  int batch_size = 20;
  int expansion_cap = 10;
  bool no_balance = false;
  double min_ratio = 0.20;
  int min_inliers = 15;
  double inlier_angle_deg = 10.0;
  int budget = 100;
  bool parallel_pipeline = false;
  bool reference = false;
  int reference_iterations = 10000;
  double prior_radius = -1.0;     // override the per-record d when >= 0
  double prior_angle_deg = -1.0;  // override the per-record theta when >= 0
};

int cmd_localize(const LocalizeOpts& opt, const CommonOpts& common) {
  require_input(opt.map_path, "map");
  require_input(opt.queries_path, "queries");
  require_input(opt.rig_path, "rig");
  if (!opt.priors_path.empty()) require_input(opt.priors_path, "priors");

  const GlobalMap map = GlobalMap::load(opt.map_path);
  const auto queries = io::load_query_frames(opt.queries_path);
  const CameraRig rig = io::load_rig(opt.rig_path);

  std::unordered_map<std::uint64_t, PosePrior> priors;
  if (!opt.priors_path.empty())
    for (const auto& pr : io::load_priors(opt.priors_path)) {
      PosePrior p = pr.prior;
      if (opt.prior_radius >= 0.0) p.position_radius = opt.prior_radius;
      if (opt.prior_angle_deg >= 0.0) p.heading_half_angle = opt.prior_angle_deg * M_PI / 180.0;
      priors[pr.frame_id] = p;
    }

  LocalizeConfig base;
  base.matcher.ratio_forward = opt.ratio_forward;
  base.matcher.ratio_backward = opt.ratio_backward;
  if (opt.ratio_preset == "strict") {
    base.matcher.ratio_forward = base.matcher.ratio_backward = 0.7;
  } else if (!opt.ratio_preset.empty() && opt.ratio_preset != "default") {
    throw io::ConfigError("unknown ratio preset: " + opt.ratio_preset);
  }
  base.matcher.batch_size = opt.batch_size;
  base.matcher.expansion_neighbor_cap = opt.expansion_cap;
  base.matcher.balance_images = !opt.no_balance;
  base.ransac.thresholds.min_inlier_ratio = opt.min_ratio;
  base.ransac.thresholds.min_inliers = opt.min_inliers;
  base.ransac.thresholds.inlier_angle = opt.inlier_angle_deg * M_PI / 180.0;
  base.ransac.per_batch_budget = opt.budget;
  base.filter.base_inlier_angle = opt.alpha_deg * M_PI / 180.0;
  base.deterministic = !opt.parallel_pipeline;

  ReferenceConfig ref;
  ref.ratio_forward = base.matcher.ratio_forward;
  ref.ratio_backward = base.matcher.ratio_backward;
  ref.thresholds = base.ransac.thresholds;
  ref.ransac_iterations = opt.reference_iterations;

  const int threads = effective_threads(common);
  omp_set_num_threads(threads);

  std::vector<LocalizationResult> results(queries.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(queries.size()); ++i) {
    const QueryFrame& frame = queries[i];
    std::optional<PosePrior> prior;
    if (const auto it = priors.find(frame.frame_id); it != priors.end()) prior = it->second;
    if (opt.reference) {
      ReferenceConfig rc = ref;
      rc.seed = derive_seed(common.seed, 0x726566ULL, frame.frame_id);
      results[i] = reference_localize(frame, map, rig, rc);
    } else {
      LocalizeConfig cfg = base;
      cfg.ransac.seed = derive_seed(common.seed, 0x6c6f63ULL, frame.frame_id);
      results[i] = localize(frame, map, rig, prior, cfg);
    }
  }

  io::save_results(results, opt.out_path, common.deterministic);

  std::size_t localized = 0;
  double wall = 0.0, comparisons = 0.0, cand_comparisons = 0.0, processed_frac = 0.0;
  for (const auto& r : results) {
    if (r.status == LocalizationStatus::Localized) {
      ++localized;
      wall += r.stats.wall_time_ms;
    }
    comparisons += static_cast<double>(r.stats.descriptor_comparisons);
    cand_comparisons += static_cast<double>(r.stats.candidate_comparisons);
    if (r.stats.features_total > 0)
      processed_frac +=
          static_cast<double>(r.stats.features_processed) / r.stats.features_total;
  }
  const double n = std::max<std::size_t>(std::size_t{1}, results.size());
  std::cout << "localize: " << localized << "/" << results.size() << " frames ("
            << 100.0 * localized / n << "%)"
            << ", mean matching+estimation time " << (localized ? wall / localized : 0.0)
            << " ms/frame (feature extraction excluded)"
            << ", mean descriptor comparisons " << comparisons / n << " (" << cand_comparisons / n
            << " against word candidates)"
            << ", mean feature fraction processed " << processed_frac / n << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fuse

int cmd_fuse(const std::string& results_path, const std::string& odometry_path,
             const std::string& map_path, const std::string& queries_path,
             const std::string& rig_path, const std::string& out_path,
             const std::string& gt_path, int window, double sigma1_deg,
             const CommonOpts& common) {
  require_input(results_path, "results");
  require_input(odometry_path, "odometry");
  require_input(map_path, "map");
  require_input(queries_path, "queries");
  require_input(rig_path, "rig");
  omp_set_num_threads(effective_threads(common));

  const auto results = io::load_results(results_path);
  const auto odometry = io::load_odometry(odometry_path);
  const GlobalMap map = GlobalMap::load(map_path);
  const auto queries = io::load_query_frames(queries_path);
  const CameraRig rig = io::load_rig(rig_path);

  std::unordered_map<std::uint64_t, const QueryFrame*> frame_by_id;
  for (const auto& q : queries) frame_by_id[q.frame_id] = &q;

  FusionConfig fcfg;
  fcfg.window_size = window;
  fcfg.sigma1 = Eigen::Matrix2d::Identity() * std::pow(sigma1_deg * M_PI / 180.0, 2.0);
  fcfg.optimize_on_add = false;
  FusionWindow win(rig, fcfg);

  OdometryBuffer buffer;
  for (const auto& inc : odometry) buffer.push(inc);

  std::vector<io::ResultRecord> locs;
  for (const auto& r : results)
    if (r.localized) locs.push_back(r);
  std::sort(locs.begin(), locs.end(),
            [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  if (locs.empty()) throw io::ConfigError("no localized frames in results");

  std::vector<std::pair<double, Pose>> fused;
  std::int64_t next_node_id = 0;

  for (std::size_t k = 0; k < locs.size(); ++k) {
    const auto& r = locs[k];

    PoseNode node;
    node.node_id = next_node_id++;
    node.timestamp = r.timestamp;

    const auto fit = frame_by_id.find(r.frame_id);
    if (fit == frame_by_id.end())
      throw io::ConfigError("result frame " + std::to_string(r.frame_id) +
                            " missing from queries");
    for (const auto& inl : r.inliers) {
      if (!map.has_point(inl.point_id)) continue;
      for (const auto& cam : fit->second->cameras) {
        if (cam.camera_id != inl.camera_id) continue;
        if (inl.feature < 0 || inl.feature >= static_cast<int>(cam.features.size())) continue;
        MatchConstraint mc;
        mc.camera_id = inl.camera_id;
        mc.bearing = cam.features[inl.feature].bearing;
        mc.point = map.point(map.index_of(inl.point_id)).position;
        node.matches.push_back(mc);
      }
    }

    std::optional<RelativeConstraint> rel;
    if (win.size() > 0) {
      const PoseNode& prev = win.newest();
      Pose delta = Pose::identity();
      Vec6 var_sum = Vec6::Zero();
      double t = prev.timestamp;
      for (const auto& inc : buffer.increments()) {
        if (inc.t_from < t - 1e-9) continue;
        if (inc.t_from > t + 1e-9) break;
        if (inc.t_to > r.timestamp + 1e-9) break;
        delta = delta.compose(inc.delta);
        var_sum += inc.sigma0_diag;
        t = inc.t_to;
      }
      if (std::abs(t - r.timestamp) > 1e-6)
        throw io::ConfigError("odometry does not cover the interval up to frame " +
                              std::to_string(r.frame_id));
      RelativeConstraint c;
      c.from_node = prev.node_id;
      c.to_node = node.node_id;
      c.delta = delta;
      c.sigma0 = var_sum.cwiseMax(1e-12).asDiagonal();
      rel = c;
      node.pose = prev.pose.compose(delta);  // odometry-predicted initialization
    } else {
      node.pose = r.pose;
    }

    win.add_localization(node);
    if (rel) win.add_odometry(*rel);
    const OptimizeReport rep = win.optimize();
    if (!rep.ok) MCLOC_LOG_WARN("optimization aborted: %s", rep.message.c_str());

    // emit the corrected node pose, then odometry-rate poses until the next node
    fused.emplace_back(win.newest().timestamp, win.newest().pose);
    const bool last = k + 1 == locs.size();
    const double t_end =
        last ? (odometry.empty() ? r.timestamp : odometry.back().t_to) : locs[k + 1].timestamp;
    double t = win.newest().timestamp;
    for (const auto& inc : buffer.increments()) {
      if (inc.t_from < t - 1e-9) continue;
      if (inc.t_from > t + 1e-9) break;
      if (inc.t_to > t_end + (last ? 1e-9 : -1e-9)) break;
      fused.emplace_back(inc.t_to, query_pose(win, buffer, inc.t_to));
      t = inc.t_to;
    }
  }

  io::save_trajectory(fused, out_path);
  std::cout << "fuse: " << locs.size() << " pose nodes, " << fused.size()
            << " fused poses -> " << out_path << "\n";

  if (!gt_path.empty()) {
    require_input(gt_path, "ground truth");
    const auto gt = io::load_ground_truth(gt_path);
    const double fused_ate = sim::ate_rms(fused, gt, 1e-6);

    // integrate raw odometry from the first ground-truth pose for comparison
    std::vector<std::pair<double, Pose>> raw;
    if (!gt.empty()) {
      Pose p = gt.front().pose;
      raw.emplace_back(gt.front().timestamp, p);
      for (const auto& inc : odometry) {
        p = p.compose(inc.delta);
        raw.emplace_back(inc.t_to, p);
      }
    }
    const double raw_ate = sim::ate_rms(raw, gt, 1e-6);
    std::cout << "fuse: ATE fused " << fused_ate << " m vs raw odometry " << raw_ate << " m\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

int cmd_benchmark(const std::string& results_path, const std::string& gt_path, bool planar,
                  const std::string& out_json, const std::string& classes_arg) {
  require_input(results_path, "results");
  require_input(gt_path, "ground truth");
  const auto results = io::load_results(results_path);
  const auto gt = io::load_ground_truth(gt_path);

  std::vector<sim::ThresholdClass> classes = sim::default_threshold_classes();
  if (!classes_arg.empty()) {
    classes.clear();
    std::stringstream ss(classes_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto slash = item.find('/');
      if (slash == std::string::npos)
        throw io::ConfigError("threshold classes must look like '2/0.25,5/0.5'");
      classes.push_back({std::stod(item.substr(0, slash)), std::stod(item.substr(slash + 1))});
    }
  }

  std::vector<sim::EvaluatedPose> evals;
  for (const auto& r : results) evals.push_back({r.frame_id, r.localized, r.pose});
  const sim::ErrorTable table = sim::evaluate(evals, gt, classes, planar);

  std::cout << "% of poses within error thresholds (deg / m)"
            << (planar ? " [planar position]" : "") << "\n";
  for (const auto& c : table.classes) std::cout << "\t" << c.heading_deg << "/" << c.position_m;
  std::cout << "\n";
  std::ostringstream row;
  row << std::fixed << std::setprecision(1);
  for (double pct : table.percentages) row << "\t" << pct;
  std::cout << row.str() << "\n";

  double wall = 0.0;
  std::size_t localized = 0;
  for (const auto& r : results) {
    if (!r.localized) continue;
    ++localized;
    wall += r.stats.wall_time_ms;
  }
  std::cout << "localized " << localized << "/" << results.size() << ", mean runtime "
            << (localized ? wall / localized : 0.0) << " ms (localized frames)\n";

  if (!out_json.empty()) {
    nlohmann::json jc = nlohmann::json::array();
    for (std::size_t i = 0; i < table.classes.size(); ++i)
      jc.push_back({{"heading_deg", table.classes[i].heading_deg},
                    {"position_m", table.classes[i].position_m},
                    {"percent", table.percentages[i]}});
    nlohmann::json out = {{"classes", jc},
                          {"total_frames", table.total_frames},
                          {"localized_frames", table.localized_frames},
                          {"planar", planar}};
    std::ofstream os(out_json);
    os << out.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-camera visual localization toolkit"};
  app.require_subcommand(1);

  CommonOpts common;

  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic scene, map and queries");
  std::string sim_config, sim_out = "sim_out";
  sim_cmd->add_option("--config", sim_config, "scene/trajectory config JSON");
  sim_cmd->add_option("--out-dir", sim_out, "output directory");
  add_common(sim_cmd, &common);

  auto* bm_cmd = app.add_subcommand("build-map", "build a binary map from a JSON point file");
  std::string bm_in, bm_out = "map.mclmap";
  int bm_words = 1024, bm_pq_m = 8, bm_pq_k = 256, bm_cap = 25000;
  bool bm_pq = false;
  bm_cmd->add_option("--input", bm_in, "map source JSON")->required();
  bm_cmd->add_option("--out", bm_out, "output map path");
  bm_cmd->add_option("--words", bm_words, "vocabulary size");
  bm_cmd->add_flag("--pq", bm_pq, "product-quantize descriptors");
  bm_cmd->add_option("--pq-m", bm_pq_m, "PQ subquantizers");
  bm_cmd->add_option("--pq-k", bm_pq_k, "PQ centroids per subquantizer");
  bm_cmd->add_option("--training-cap", bm_cap, "vocabulary training sample cap");
  add_common(bm_cmd, &common);

  auto* loc_cmd = app.add_subcommand("localize", "localize query frames against a map");
  LocalizeOpts lo;
  loc_cmd->add_option("--map", lo.map_path, "map file")->required();
  loc_cmd->add_option("--queries", lo.queries_path, "query frames JSON")->required();
  loc_cmd->add_option("--rig", lo.rig_path, "rig JSON")->required();
  loc_cmd->add_option("--priors", lo.priors_path, "pose prior JSON");
  loc_cmd->add_option("--out", lo.out_path, "results JSONL")->required();
  loc_cmd->add_option("--ratio-forward", lo.ratio_forward, "forward ratio threshold");
  loc_cmd->add_option("--ratio-backward", lo.ratio_backward, "backward ratio threshold");
  loc_cmd->add_option("--ratio-preset", lo.ratio_preset, "'default' (0.9) or 'strict' (0.7)");
  loc_cmd->add_option("--alpha-deg", lo.alpha_deg, "base inlier cone angle for the prior filter");
  loc_cmd->add_option("--batch-size", lo.batch_size, "features per matching batch");
  loc_cmd->add_option("--expansion-cap", lo.expansion_cap, "covisible expansion neighbor cap");
  loc_cmd->add_flag("--no-balance", lo.no_balance, "disable the per-image balancing cost");
  loc_cmd->add_option("--min-ratio", lo.min_ratio, "acceptance inlier ratio");
  loc_cmd->add_option("--min-inliers", lo.min_inliers, "acceptance inlier count");
  loc_cmd->add_option("--inlier-angle-deg", lo.inlier_angle_deg, "inlier angular threshold");
  loc_cmd->add_option("--budget", lo.budget, "sampling iterations per batch");
  loc_cmd->add_option("--prior-radius", lo.prior_radius,
                      "override the prior position radius d (meters)");
  loc_cmd->add_option("--prior-angle-deg", lo.prior_angle_deg,
                      "override the prior heading half-angle theta (degrees)");
  loc_cmd->add_flag("--parallel-pipeline", lo.parallel_pipeline,
                    "run matcher and estimator on separate threads per frame");
  loc_cmd->add_flag("--reference", lo.reference,
                    "run the exhaustive-matching reference pipeline instead");
  loc_cmd->add_option("--reference-iterations", lo.reference_iterations,
                      "plain RANSAC iterations in reference mode");
  add_common(loc_cmd, &common);

  auto* fuse_cmd = app.add_subcommand("fuse", "fuse localization results with odometry");
  std::string fu_results, fu_odo, fu_map, fu_queries, fu_rig, fu_out = "fused.jsonl", fu_gt;
  int fu_window = 8;
  double fu_sigma1 = 0.3;
  fuse_cmd->add_option("--results", fu_results, "localization results JSONL")->required();
  fuse_cmd->add_option("--odometry", fu_odo, "odometry JSONL")->required();
  fuse_cmd->add_option("--map", fu_map, "map file")->required();
  fuse_cmd->add_option("--queries", fu_queries, "query frames JSON")->required();
  fuse_cmd->add_option("--rig", fu_rig, "rig JSON")->required();
  fuse_cmd->add_option("--out", fu_out, "fused trajectory JSONL");
  fuse_cmd->add_option("--groundtruth", fu_gt, "ground truth for the ATE summary");
  fuse_cmd->add_option("--window", fu_window, "sliding window size N");
  fuse_cmd->add_option("--sigma1-deg", fu_sigma1, "match residual sigma (degrees)");
  add_common(fuse_cmd, &common);

  auto* bench_cmd = app.add_subcommand("benchmark", "error-threshold table for results");
  std::string be_results, be_gt, be_out, be_classes;
  bool be_planar = false;
  bench_cmd->add_option("--results", be_results, "results JSONL")->required();
  bench_cmd->add_option("--groundtruth", be_gt, "ground truth JSON")->required();
  bench_cmd->add_flag("--planar", be_planar, "evaluate position error in the ground plane");
  bench_cmd->add_option("--out", be_out, "also write the table as JSON");
  bench_cmd->add_option("--classes", be_classes, "threshold classes, e.g. '2/0.25,5/0.5'");
  add_common(bench_cmd, &common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim_config, sim_out, common);
    if (bm_cmd->parsed())
      return cmd_build_map(bm_in, bm_out, bm_words, bm_pq, bm_pq_m, bm_pq_k, bm_cap, common);
    if (loc_cmd->parsed()) return cmd_localize(lo, common);
    if (fuse_cmd->parsed())
      return cmd_fuse(fu_results, fu_odo, fu_map, fu_queries, fu_rig, fu_out, fu_gt, fu_window,
                      fu_sigma1, common);
    if (bench_cmd->parsed())
      return cmd_benchmark(be_results, be_gt, be_planar, be_out, be_classes);
  } catch (const io::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const io::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const MapFormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
