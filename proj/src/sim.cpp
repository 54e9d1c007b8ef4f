#include "mcloc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "mcloc/random.hpp"

namespace mcloc::sim {

namespace {

constexpr std::uint64_t kStreamPoints = 0x706f696e7473ULL;
constexpr std::uint64_t kStreamTemplates = 0x74656d70ULL;
constexpr std::uint64_t kStreamFrame = 0x6672616d65ULL;
constexpr std::uint64_t kStreamObs = 0x6f6273ULL;
constexpr std::uint64_t kStreamRender = 0x72656e646572ULL;
constexpr std::uint64_t kStreamOdo = 0x6f646fULL;

struct GridDims {
  int nx, ny, nz;
};

GridDims grid_dims(const SceneSpec& spec) {
  return {std::max(1, static_cast<int>(std::ceil(spec.extent.x() / spec.cell_size))),
          std::max(1, static_cast<int>(std::ceil(spec.extent.y() / spec.cell_size))),
          std::max(1, static_cast<int>(std::ceil(spec.extent.z() / spec.cell_size)))};
}

std::uint64_t cell_index(const SceneSpec& spec, const GridDims& g, const Vec3& p) {
  const auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  const int ix = clampi(static_cast<int>(p.x() / spec.cell_size), g.nx);
  const int iy = clampi(static_cast<int>(p.y() / spec.cell_size), g.ny);
  const int iz = clampi(static_cast<int>(p.z() / spec.cell_size), g.nz);
  return (static_cast<std::uint64_t>(iz) * g.ny + iy) * g.nx + ix;
}

Vec3 cell_center(const SceneSpec& spec, const GridDims& g, std::uint64_t cell) {
  const int ix = static_cast<int>(cell % g.nx);
  const int iy = static_cast<int>((cell / g.nx) % g.ny);
  const int iz = static_cast<int>(cell / (static_cast<std::uint64_t>(g.nx) * g.ny));
  return Vec3((ix + 0.5) * spec.cell_size, (iy + 0.5) * spec.cell_size,
              (iz + 0.5) * spec.cell_size);
}

void add_descriptor_noise(Eigen::Ref<Eigen::VectorXf> desc, double sigma,
                          std::mt19937_64& rng) {
  if (sigma <= 0.0) {
    const float n = desc.norm();
    if (n > 0) desc /= n;
    return;
  }
  std::normal_distribution<double> g(0.0, sigma / std::sqrt(double(desc.size())));
  for (Eigen::Index i = 0; i < desc.size(); ++i) desc[i] += static_cast<float>(g(rng));
  const float n = desc.norm();
  if (n > 0) desc /= n;
}

}  // namespace

std::uint64_t Scene::cell_frame_of(const Vec3& p) const {
  return cell_index(spec, grid_dims(spec), p);
}

Vec3 Scene::frame_center(std::uint64_t frame_id) const {
  return cell_center(spec, grid_dims(spec), frame_id);
}

Scene generate_scene(const SceneSpec& spec) {
  if (spec.outlier_fraction < 0.0 || spec.outlier_fraction >= 1.0)
    throw std::invalid_argument("outlier_fraction must lie in [0, 1)");
  if (spec.descriptor_noise < 0.0)
    throw std::invalid_argument("descriptor_noise must be nonnegative");
  if (spec.point_count < 1) throw std::invalid_argument("point_count must be positive");

  Scene scene;
  scene.spec = spec;

  auto rng_pts = make_rng(spec.seed, kStreamPoints);
  std::uniform_real_distribution<double> ux(0.0, spec.extent.x());
  std::uniform_real_distribution<double> uy(0.0, spec.extent.y());
  std::uniform_real_distribution<double> uz(0.0, spec.extent.z());
  scene.points.reserve(spec.point_count);
  for (int i = 0; i < spec.point_count; ++i)
    scene.points.emplace_back(ux(rng_pts), uy(rng_pts), uz(rng_pts));

  auto rng_tpl = make_rng(spec.seed, kStreamTemplates);
  std::normal_distribution<double> gn(0.0, 1.0);
  scene.templates.resize(spec.point_count, spec.descriptor_dim);
  for (int i = 0; i < spec.point_count; ++i) {
    for (int d = 0; d < spec.descriptor_dim; ++d)
      scene.templates(i, d) = static_cast<float>(gn(rng_tpl));
    scene.templates.row(i).normalize();
  }

  // Bucket points by cell for radius queries.
  const GridDims dims = grid_dims(spec);
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t i = 0; i < scene.points.size(); ++i)
    buckets[cell_index(spec, dims, scene.points[i])].push_back(i);

  const double radius = spec.coverage_factor * spec.cell_size;
  const int reach = static_cast<int>(std::ceil(radius / spec.cell_size));

  const std::uint64_t n_cells =
      static_cast<std::uint64_t>(dims.nx) * dims.ny * dims.nz;
  for (std::uint64_t cell = 0; cell < n_cells; ++cell) {
    const auto own = buckets.find(cell);
    std::vector<std::uint32_t> observed = own != buckets.end() ? own->second
                                                               : std::vector<std::uint32_t>{};
    const std::size_t guaranteed = observed.size();

    const Vec3 center = cell_center(spec, dims, cell);
    std::vector<std::uint32_t> nearby;
    const int cx = static_cast<int>(cell % dims.nx);
    const int cy = static_cast<int>((cell / dims.nx) % dims.ny);
    const int cz = static_cast<int>(cell / (static_cast<std::uint64_t>(dims.nx) * dims.ny));
    for (int dz = -reach; dz <= reach; ++dz)
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dx = -reach; dx <= reach; ++dx) {
          const int x = cx + dx, y = cy + dy, z = cz + dz;
          if (x < 0 || y < 0 || z < 0 || x >= dims.nx || y >= dims.ny || z >= dims.nz)
            continue;
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const std::uint64_t nc = (static_cast<std::uint64_t>(z) * dims.ny + y) * dims.nx + x;
          const auto it = buckets.find(nc);
          if (it == buckets.end()) continue;
          for (std::uint32_t pi : it->second)
            if ((scene.points[pi] - center).norm() <= radius) nearby.push_back(pi);
        }

    if (static_cast<int>(guaranteed) < spec.max_obs_per_frame && !nearby.empty()) {
      auto rng = make_rng(spec.seed, kStreamFrame, cell);
      std::shuffle(nearby.begin(), nearby.end(), rng);
      const std::size_t room = spec.max_obs_per_frame - guaranteed;
      nearby.resize(std::min(nearby.size(), room));
      observed.insert(observed.end(), nearby.begin(), nearby.end());
    }
    if (observed.empty()) continue;
    std::sort(observed.begin(), observed.end());
    observed.erase(std::unique(observed.begin(), observed.end()), observed.end());
    scene.frame_ids.push_back(cell);
    scene.frame_points.push_back(std::move(observed));
  }
  return scene;
}

Eigen::VectorXf observation_descriptor(const Scene& scene, std::uint64_t frame_id,
                                       std::uint32_t point_index) {
  Eigen::VectorXf d = scene.templates.row(point_index);
  auto rng = make_rng(scene.spec.seed, kStreamObs, frame_id, point_index);
  add_descriptor_noise(d, scene.spec.descriptor_noise, rng);
  return d;
}

GlobalMap build_scene_map(const Scene& scene, const SceneMapOptions& opts) {
  const int dim = scene.spec.descriptor_dim;

  // Deterministic training subset: stride over all observations.
  std::size_t total_obs = 0;
  for (const auto& pts : scene.frame_points) total_obs += pts.size();
  const std::size_t cap = std::max<std::size_t>(opts.word_count, opts.vocab_training_cap);
  const std::size_t stride = std::max<std::size_t>(1, total_obs / cap);

  std::vector<std::pair<std::uint64_t, std::uint32_t>> train_keys;
  std::size_t k = 0;
  for (std::size_t f = 0; f < scene.frame_ids.size(); ++f)
    for (std::uint32_t pi : scene.frame_points[f]) {
      if (k % stride == 0) train_keys.emplace_back(scene.frame_ids[f], pi);
      ++k;
    }

  DescMatrix training(train_keys.size(), dim);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(train_keys.size()); ++i)
    training.row(i) = observation_descriptor(scene, train_keys[i].first, train_keys[i].second);

  KMeansOptions km;
  km.exec = opts.exec;
  const Vocabulary vocab = build_vocabulary(training, opts.word_count, opts.vocab_seed, km);

  MapBuilder builder(dim);
  for (std::uint32_t pi = 0; pi < scene.points.size(); ++pi)
    builder.add_point(pi, scene.points[pi]);

  // Stream observations frame by frame; assign words in bulk per frame.
  for (std::size_t f = 0; f < scene.frame_ids.size(); ++f) {
    const std::uint64_t fid = scene.frame_ids[f];
    const auto& pts = scene.frame_points[f];
    DescMatrix descs(pts.size(), dim);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(pts.size()); ++i)
      descs.row(i) = observation_descriptor(scene, fid, pts[i]);
    const auto words = kernels::assign_nearest(descs, vocab.words, opts.exec);
    for (std::size_t i = 0; i < pts.size(); ++i)
      builder.add_observation(pts[i], static_cast<std::uint32_t>(words[i]), descs.row(i).data(),
                              fid);
  }

  MapBuildOptions mb;
  mb.use_pq = opts.use_pq;
  mb.pq_m = opts.pq_m;
  mb.pq_k = opts.pq_k;
  mb.pq_seed = derive_seed(opts.vocab_seed, 0x7071ULL);
  return builder.build(vocab, mb);
}

CameraRig make_default_rig(int n_cameras, double fov_half_angle_deg, double lever_arm) {
  // Camera axes in rig coordinates: z forward along the view direction,
  // x right, y down.
  Mat3 cam_to_rig0;
  cam_to_rig0.col(0) = Vec3(0, -1, 0);
  cam_to_rig0.col(1) = Vec3(0, 0, -1);
  cam_to_rig0.col(2) = Vec3(1, 0, 0);

  std::vector<RigCamera> cams;
  for (int i = 0; i < n_cameras; ++i) {
    const double yaw = 2.0 * M_PI * i / n_cameras;
    const Mat3 yaw_rot = so3_exp(Vec3(0, 0, yaw));
    RigCamera c;
    c.camera_id = i;
    c.fov_half_angle = fov_half_angle_deg * M_PI / 180.0;
    c.rig_from_camera = Pose(yaw_rot * cam_to_rig0, yaw_rot * Vec3(lever_arm, 0.0, 0.0));
    cams.push_back(c);
  }
  return CameraRig(cams);
}

std::vector<TimedPose> make_trajectory(const TrajectorySpec& spec, const Vec3& extent) {
  std::vector<TimedPose> out;
  out.reserve(spec.steps);
  const Vec3 center(extent.x() / 2.0, extent.y() / 2.0, spec.height);
  if (spec.shape == TrajectorySpec::Shape::Circle) {
    const double radius = 0.35 * std::min(extent.x(), extent.y());
    const double dphi = spec.step_length / radius;
    for (int i = 0; i < spec.steps; ++i) {
      const double phi = dphi * i;
      const Vec3 pos = center + Vec3(radius * std::cos(phi), radius * std::sin(phi), 0.0);
      // Heading tangent to the circle; rig x forward.
      const Mat3 R = so3_exp(Vec3(0, 0, phi + M_PI / 2.0));
      out.push_back({static_cast<std::uint64_t>(i), spec.dt * i, Pose(R, pos)});
    }
  } else {
    const Vec3 start(center.x() - spec.step_length * spec.steps / 2.0, center.y(), spec.height);
    for (int i = 0; i < spec.steps; ++i) {
      const Vec3 pos = start + Vec3(spec.step_length * i, 0.0, 0.0);
      out.push_back({static_cast<std::uint64_t>(i), spec.dt * i, Pose(Quat::Identity(), pos)});
    }
  }
  return out;
}

RenderedFrame render_frame(const Scene& scene, const CameraRig& rig, const Pose& pose,
                           std::uint64_t frame_id, double timestamp) {
  const SceneSpec& spec = scene.spec;
  RenderedFrame out;
  out.frame.frame_id = frame_id;
  out.frame.timestamp = timestamp;

  auto rng = make_rng(spec.seed, kStreamRender, frame_id);
  std::normal_distribution<double> gn(0.0, 1.0);
  const double sigma_b = spec.bearing_noise_deg * M_PI / 180.0;

  struct Pending {
    int camera_slot;
    Vec3 bearing;
    Eigen::VectorXf descriptor;
    std::int64_t label;
  };
  std::vector<Pending> pending;

  for (std::size_t s = 0; s < rig.cameras().size(); ++s) {
    const RigCamera& cam = rig.cameras()[s];
    const Pose world_from_camera = pose.compose(cam.rig_from_camera);
    const Mat3 R_cw = world_from_camera.rotation().transpose();
    const double cos_fov = std::cos(cam.fov_half_angle);

    std::vector<std::uint32_t> visible;
    for (std::uint32_t pi = 0; pi < scene.points.size(); ++pi) {
      const Vec3 d = scene.points[pi] - world_from_camera.t;
      const double range = d.norm();
      if (range < spec.min_range || range > spec.max_range) continue;
      const Vec3 b = R_cw * (d / range);
      if (b.z() < cos_fov) continue;
      visible.push_back(pi);
    }
    std::shuffle(visible.begin(), visible.end(), rng);
    if (static_cast<int>(visible.size()) > spec.max_features_per_camera)
      visible.resize(spec.max_features_per_camera);

    for (std::uint32_t pi : visible) {
      const Vec3 d = scene.points[pi] - world_from_camera.t;
      Vec3 b = R_cw * d.normalized();
      if (sigma_b > 0.0) {
        const auto B = tangent_basis(b);
        b = (b + sigma_b * (gn(rng) * B.col(0) + gn(rng) * B.col(1))).normalized();
      }
      Eigen::VectorXf desc = scene.templates.row(pi);
      add_descriptor_noise(desc, spec.descriptor_noise, rng);
      pending.push_back({static_cast<int>(s), b, std::move(desc), pi});
    }

    const int n_true = static_cast<int>(visible.size());
    const int n_out = static_cast<int>(
        std::lround(spec.outlier_fraction / (1.0 - spec.outlier_fraction) * n_true));
    for (int i = 0; i < n_out; ++i) {
      const Vec3 b = random_in_cone(rng, Vec3::UnitZ(), cam.fov_half_angle);
      Eigen::VectorXf desc(spec.descriptor_dim);
      for (int d = 0; d < spec.descriptor_dim; ++d) desc[d] = static_cast<float>(gn(rng));
      desc.normalize();
      pending.push_back({static_cast<int>(s), b, std::move(desc), -1});
    }
  }

  // Interleave features so descriptor order carries no inlier/outlier signal.
  std::shuffle(pending.begin(), pending.end(), rng);

  out.frame.cameras.resize(rig.cameras().size());
  for (std::size_t s = 0; s < rig.cameras().size(); ++s)
    out.frame.cameras[s].camera_id = rig.cameras()[s].camera_id;
  out.frame.descriptors.resize(static_cast<Eigen::Index>(pending.size()), spec.descriptor_dim);
  out.labels.assign(pending.size(), -1);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    out.frame.descriptors.row(static_cast<Eigen::Index>(i)) = pending[i].descriptor;
    out.labels[i] = pending[i].label;
    BearingFeature f;
    f.camera_id = out.frame.cameras[pending[i].camera_slot].camera_id;
    f.bearing = pending[i].bearing;
    f.descriptor_id = static_cast<int>(i);
    out.frame.cameras[pending[i].camera_slot].features.push_back(f);
  }
  return out;
}

std::vector<OdometryIncrement> simulate_odometry(const std::vector<TimedPose>& trajectory,
                                                 const OdometrySpec& spec) {
  if (trajectory.size() < 2)
    throw std::invalid_argument("odometry needs at least two trajectory poses");
  auto rng = make_rng(spec.seed, kStreamOdo);
  std::normal_distribution<double> gn(0.0, 1.0);

  std::vector<OdometryIncrement> out;
  out.reserve(trajectory.size() - 1);
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    const Pose rel = trajectory[i - 1].pose.inverse().compose(trajectory[i].pose);
    Vec3 t = rel.t * (1.0 + spec.drift_per_meter);
    Vec3 rot_noise = Vec3::Zero();
    if (spec.trans_noise_m > 0.0)
      t += spec.trans_noise_m * Vec3(gn(rng), gn(rng), gn(rng));
    if (spec.rot_noise_rad > 0.0)
      rot_noise = spec.rot_noise_rad * Vec3(gn(rng), gn(rng), gn(rng));

    OdometryIncrement inc;
    inc.t_from = trajectory[i - 1].timestamp;
    inc.t_to = trajectory[i].timestamp;
    inc.delta = Pose(so3_exp(rot_noise) * rel.rotation(), t);
    const double rv = std::max(spec.rot_noise_rad * spec.rot_noise_rad, 1e-10);
    const double tv = std::max(spec.trans_noise_m * spec.trans_noise_m, 1e-8);
    inc.sigma0_diag << rv, rv, rv, tv, tv, tv;
    out.push_back(inc);
  }
  return out;
}

std::vector<ThresholdClass> default_threshold_classes() {
  return {{2.0, 0.25}, {5.0, 0.5}, {10.0, 5.0}, {15.0, 10.0}, {20.0, 20.0}};
}

ErrorTable evaluate(const std::vector<EvaluatedPose>& results,
                    const std::vector<TimedPose>& ground_truth,
                    const std::vector<ThresholdClass>& classes, bool planar) {
  std::unordered_map<std::uint64_t, const TimedPose*> gt;
  for (const auto& g : ground_truth) gt[g.frame_id] = &g;

  ErrorTable table;
  table.classes = classes;
  table.percentages.assign(classes.size(), 0.0);
  table.total_frames = results.size();

  std::vector<std::size_t> within(classes.size(), 0);
  for (const auto& r : results) {
    const auto it = gt.find(r.frame_id);
    if (it == gt.end())
      throw std::invalid_argument("result frame id " + std::to_string(r.frame_id) +
                                  " missing from ground truth");
    if (!r.localized) continue;
    ++table.localized_frames;
    const Pose& truth = it->second->pose;
    const double heading_deg = r.pose.rotation_angle_to(truth) * 180.0 / M_PI;
    Vec3 dp = r.pose.t - truth.t;
    if (planar) dp.z() = 0.0;
    const double pos = dp.norm();
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (heading_deg <= classes[c].heading_deg && pos <= classes[c].position_m) ++within[c];
  }
  for (std::size_t c = 0; c < classes.size(); ++c)
    table.percentages[c] =
        table.total_frames == 0 ? 0.0 : 100.0 * within[c] / table.total_frames;
  return table;
}

double ate_rms(const std::vector<std::pair<double, Pose>>& estimated,
               const std::vector<TimedPose>& ground_truth, double time_tol) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& [t, pose] : estimated) {
    const TimedPose* best = nullptr;
    double best_dt = time_tol;
    for (const auto& g : ground_truth) {
      const double dt = std::abs(g.timestamp - t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = &g;
      }
    }
    if (!best) continue;
    acc += (pose.t - best->pose.t).squaredNorm();
    ++n;
  }
  if (n == 0) throw std::invalid_argument("no timestamp associations for ATE");
  return std::sqrt(acc / n);
}

}  // namespace mcloc::sim
