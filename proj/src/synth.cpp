#include "raflow/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <Eigen/Geometry>

#include "raflow/dataset.hpp"
#include "raflow/geometry.hpp"
#include "raflow/rng.hpp"

namespace raflow {
namespace {

enum class Shape { Wall, Pole, Box };

constexpr std::size_t kStaticStructures = 6;

struct Structure {
  Shape shape = Shape::Wall;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half = Eigen::Vector3d::Zero();  // wall: x half-length, z half-height; pole: radius in x
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  double rcs_mean = 0.0;
  bool moving = false;
};

Eigen::Vector3d sample_surface(const Structure& s, CounterRng& rng) {
  switch (s.shape) {
    case Shape::Wall:
      return s.center + Eigen::Vector3d(rng.uniform(-s.half.x(), s.half.x()), 0.0, rng.uniform(-s.half.z(), s.half.z()));
    case Shape::Pole: {
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      return s.center + Eigen::Vector3d(s.half.x() * std::cos(a), s.half.x() * std::sin(a),
                                        rng.uniform(-s.half.z(), s.half.z()));
    }
    case Shape::Box: {
      // Four vertical sides and the roof, chosen by area.
      const double lx = s.half.x(), ly = s.half.y(), lz = s.half.z();
      const double side_x = 4.0 * lx * lz, side_y = 4.0 * ly * lz, roof = 4.0 * lx * ly;
      const double total = 2.0 * side_x + 2.0 * side_y + roof;
      double pick = rng.uniform(0.0, total);
      const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
      Eigen::Vector3d local;
      if ((pick -= side_x) < 0.0) local = {u * lx, ly, v * lz};
      else if ((pick -= side_x) < 0.0) local = {u * lx, -ly, v * lz};
      else if ((pick -= side_y) < 0.0) local = {lx, u * ly, v * lz};
      else if ((pick -= side_y) < 0.0) local = {-lx, u * ly, v * lz};
      else local = {u * lx, v * ly, lz};
      return s.center + local;
    }
  }
  return s.center;
}

bool visible(const Eigen::Vector3d& p, const SceneConfig& cfg) {
  const double r = p.norm();
  if (r < 1.0 || r > cfg.max_range) return false;
  const Spherical sph = cartesian_to_spherical(Eigen::Vector3d(p));
  return std::abs(sph.azimuth) <= cfg.fov_azimuth && std::abs(sph.elevation) <= cfg.fov_elevation;
}

RigidTransform planar_motion(double distance, double yaw) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  t.translation = Eigen::Vector3d(distance * std::cos(0.5 * yaw), distance * std::sin(0.5 * yaw), 0.0);
  return t;
}

double received_power(double rcs, double range) { return rcs - 40.0 * std::log10(range) + 20.0; }

Eigen::Vector3d polar_point(double range, double azimuth, double z) {
  return {range * std::cos(azimuth), range * std::sin(azimuth), z};
}

// Compact structures, each holding a sizeable share of the frame, so that real
// returns form dense clusters while ghosts stay isolated.
std::vector<Structure> build_scene(const SceneConfig& cfg, CounterRng& rng) {
  std::vector<Structure> scene;
  for (int k = 0; k < 2; ++k) {
    Structure w;
    w.shape = Shape::Wall;
    w.center = polar_point(rng.uniform(10.0, 45.0), rng.uniform(-0.8, 0.8) * cfg.fov_azimuth, 0.3);
    w.half = {1.0, 0.0, 0.5};
    w.rcs_mean = rng.uniform(-5.0, 5.0);
    scene.push_back(w);
  }
  for (int k = 0; k < 2; ++k) {
    Structure p;
    p.shape = Shape::Pole;
    p.center = polar_point(rng.uniform(8.0, 40.0), rng.uniform(-0.8, 0.8) * cfg.fov_azimuth, 0.5);
    p.half = {rng.uniform(0.1, 0.2), 0.0, 0.6};
    p.rcs_mean = rng.uniform(0.0, 10.0);
    scene.push_back(p);
  }
  for (int k = 0; k < 2; ++k) {
    Structure b;
    b.shape = Shape::Box;
    b.center = polar_point(rng.uniform(8.0, 40.0), rng.uniform(-0.8, 0.8) * cfg.fov_azimuth, -0.5);
    b.half = {1.0, 0.5, 0.4};
    b.rcs_mean = rng.uniform(5.0, 15.0);
    scene.push_back(b);
  }
  for (std::size_t k = 0; k < cfg.n_movers; ++k) {
    Structure m;
    m.shape = Shape::Box;
    m.center = polar_point(rng.uniform(10.0, 40.0), rng.uniform(-0.7, 0.7) * cfg.fov_azimuth, -0.5);
    m.half = {0.8, 0.4, 0.4};
    const double heading = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const double speed = rng.uniform(cfg.mover_speed.lo, cfg.mover_speed.hi);
    m.velocity = {heading * speed, 0.0, 0.0};
    m.moving = speed > 1e-9;
    m.rcs_mean = rng.uniform(5.0, 15.0);
    scene.push_back(m);
  }
  return scene;
}

// Static quotas: walls 25% each, poles 7% each, parked boxes 18% each.
std::vector<std::size_t> point_quotas(const SceneConfig& cfg, const std::vector<Structure>& scene) {
  static constexpr double kWeights[kStaticStructures] = {0.25, 0.25, 0.07, 0.07, 0.18, 0.18};
  std::vector<std::size_t> quota(scene.size(), 0);
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < kStaticStructures; ++s) {
    quota[s] = static_cast<std::size_t>(std::floor(kWeights[s] * static_cast<double>(cfg.n_static)));
    assigned += quota[s];
  }
  for (std::size_t s = 0; assigned < cfg.n_static; s = (s + 1) % kStaticStructures, ++assigned) ++quota[s];
  for (std::size_t s = kStaticStructures; s < scene.size(); ++s) quota[s] = cfg.points_per_mover;
  return quota;
}

struct SampledPoint {
  std::size_t structure;
  Eigen::Vector3d world;  // surface point at the source time
};

// Rejection-samples a visible surface point; falls through to the next
// structure of the same class (static/moving) when one is out of view.
SampledPoint sample_visible(const std::vector<Structure>& scene, std::size_t start, const SceneConfig& cfg,
                            CounterRng& rng, const RigidTransform& world_to_sensor, double time) {
  for (std::size_t hop = 0; hop < scene.size(); ++hop) {
    const std::size_t s = (start + hop) % scene.size();
    if (scene[s].moving != scene[start].moving) continue;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Eigen::Vector3d p = sample_surface(scene[s], rng);
      const Eigen::Vector3d at_time = p + scene[s].velocity * time;
      if (visible(world_to_sensor.apply(at_time), cfg)) return {s, p};
    }
  }
  // Nothing in view: keep the last draw of the starting structure.
  return {start, sample_surface(scene[start], rng)};
}

void shuffle_indices(std::vector<std::size_t>& idx, CounterRng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
}

RadarPoint ghost_point(const SceneConfig& cfg, CounterRng& rng) {
  RadarPoint g;
  const double r = rng.uniform(2.0, cfg.max_range);
  const double az = rng.uniform(-cfg.fov_azimuth, cfg.fov_azimuth);
  const double el = rng.uniform(-cfg.fov_elevation, cfg.fov_elevation);
  g.position = spherical_to_cartesian(Spherical{r, az, el});
  g.rrv = rng.uniform(-15.0, 15.0);
  g.rcs = rng.uniform(-15.0, 5.0);
  g.power = received_power(g.rcs, r) + rng.normal();
  return g;
}

}  // namespace

void validate_scene_config(const SceneConfig& cfg) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (!(cfg.dt > 0.0)) fail("dt must be positive");
  if (!(cfg.outlier_fraction >= 0.0 && cfg.outlier_fraction <= 0.5)) fail("outlier_fraction must lie in [0, 0.5]");
  if (cfg.n_static < 3) fail("n_static must be at least 3");
  if (cfg.ego_speed.lo > cfg.ego_speed.hi || cfg.ego_yaw_rate.lo > cfg.ego_yaw_rate.hi ||
      cfg.mover_speed.lo > cfg.mover_speed.hi) {
    fail("ranges must have lo <= hi");
  }
  if (cfg.position_noise < 0.0 || cfg.rrv_noise < 0.0) fail("noise levels must be non-negative");
  if (!(cfg.max_range > 1.0) || !(cfg.fov_azimuth > 0.0) || !(cfg.fov_elevation > 0.0)) fail("invalid field of view");
}

std::size_t ghost_count(const SceneConfig& cfg) {
  const double real = static_cast<double>(cfg.n_static + cfg.n_movers * cfg.points_per_mover);
  return static_cast<std::size_t>(std::llround(cfg.outlier_fraction * real / (1.0 - cfg.outlier_fraction)));
}

GeneratedPair generate_pair(const SceneConfig& cfg, std::uint64_t index) {
  validate_scene_config(cfg);
  CounterRng rng(cfg.seed, index);

  const double speed = rng.uniform(cfg.ego_speed.lo, cfg.ego_speed.hi);
  const double yaw = rng.uniform(cfg.ego_yaw_rate.lo, cfg.ego_yaw_rate.hi) * cfg.dt;
  const double dt = cfg.dt;
  // Sensor pose at the target time, in source-sensor coordinates.
  const RigidTransform ego = planar_motion(speed * dt + 0.5 * cfg.ego_acceleration * dt * dt, yaw);
  const RigidTransform ego_cv = planar_motion(speed * dt, yaw);
  const RigidTransform to_target = ego.inverse();
  const RigidTransform to_target_cv = ego_cv.inverse();
  const RigidTransform to_next = (ego * ego).inverse();

  const std::vector<Structure> scene = build_scene(cfg, rng);
  const std::vector<std::size_t> quota = point_quotas(cfg, scene);
  const std::size_t n_ghost = ghost_count(cfg);

  GeneratedPair out;
  FramePair& pair = out.pair;
  pair.dt = dt;
  pair.source.timestamp = 0.0;
  pair.target.timestamp = dt;

  std::vector<RadarPoint> src;
  std::vector<Eigen::Vector3d> flows;
  std::vector<bool> moving, valid;
  const RigidTransform identity;
  for (std::size_t s = 0; s < scene.size(); ++s) {
    for (std::size_t q = 0; q < quota[s]; ++q) {
      const SampledPoint sp = sample_visible(scene, s, cfg, rng, identity, 0.0);
      const Structure& st = scene[sp.structure];
      const Eigen::Vector3d later = sp.world + st.velocity * dt;
      const Eigen::Vector3d flow = to_target.apply(later) - sp.world;
      const Eigen::Vector3d flow_cv = to_target_cv.apply(later) - sp.world;

      RadarPoint p;
      p.position = sp.world;
      for (int c = 0; c < 3; ++c) p.position(c) += cfg.position_noise * rng.normal();
      p.rrv = flow_cv.dot(p.position.normalized()) / dt + cfg.rrv_noise * rng.normal();
      p.rcs = st.rcs_mean + rng.normal();
      p.power = received_power(p.rcs, p.position.norm()) + rng.normal();
      src.push_back(p);
      flows.push_back(flow);
      moving.push_back(st.moving);
      valid.push_back(true);
    }
  }
  for (std::size_t g = 0; g < n_ghost; ++g) {
    src.push_back(ghost_point(cfg, rng));
    flows.push_back(Eigen::Vector3d::Zero());
    moving.push_back(false);
    valid.push_back(false);
  }

  std::vector<RadarPoint> dst;
  for (std::size_t s = 0; s < scene.size(); ++s) {
    for (std::size_t q = 0; q < quota[s]; ++q) {
      const SampledPoint sp = sample_visible(scene, s, cfg, rng, to_target, dt);
      const Structure& st = scene[sp.structure];
      const Eigen::Vector3d world_now = sp.world + st.velocity * dt;
      const Eigen::Vector3d here = to_target.apply(world_now);
      const Eigen::Vector3d next = to_next.apply(world_now + st.velocity * dt);
      RadarPoint p;
      p.position = here;
      for (int c = 0; c < 3; ++c) p.position(c) += cfg.position_noise * rng.normal();
      p.rrv = (next - here).dot(p.position.normalized()) / dt + cfg.rrv_noise * rng.normal();
      p.rcs = st.rcs_mean + rng.normal();
      p.power = received_power(p.rcs, p.position.norm()) + rng.normal();
      dst.push_back(p);
    }
  }
  for (std::size_t g = 0; g < n_ghost; ++g) dst.push_back(ghost_point(cfg, rng));

  std::vector<std::size_t> order(src.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, rng);
  out.labels.gt_flow.resize(static_cast<Eigen::Index>(src.size()), 3);
  out.labels.gt_moving.resize(src.size());
  out.labels.valid.resize(src.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    pair.source.points.push_back(src[order[i]]);
    out.labels.gt_flow.row(i) = flows[order[i]].transpose();
    out.labels.gt_moving[i] = moving[order[i]];
    out.labels.valid[i] = valid[order[i]];
  }
  std::vector<std::size_t> dst_order(dst.size());
  for (std::size_t i = 0; i < dst_order.size(); ++i) dst_order[i] = i;
  shuffle_indices(dst_order, rng);
  for (std::size_t i : dst_order) pair.target.points.push_back(dst[i]);

  out.labels.gt_ego = to_target;
  return out;
}

std::string scene_config_text(const SceneConfig& cfg) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "seed: %llu\nn_static: %zu\nn_movers: %zu\npoints_per_mover: %zu\n"
                "ego_speed: %.17g %.17g\nego_yaw_rate: %.17g %.17g\nmover_speed: %.17g %.17g\n"
                "ego_acceleration: %.17g\ndt: %.17g\nposition_noise: %.17g\nrrv_noise: %.17g\n"
                "outlier_fraction: %.17g\nfov_azimuth: %.17g\nfov_elevation: %.17g\nmax_range: %.17g\n",
                static_cast<unsigned long long>(cfg.seed), cfg.n_static, cfg.n_movers, cfg.points_per_mover,
                cfg.ego_speed.lo, cfg.ego_speed.hi, cfg.ego_yaw_rate.lo, cfg.ego_yaw_rate.hi, cfg.mover_speed.lo,
                cfg.mover_speed.hi, cfg.ego_acceleration, cfg.dt, cfg.position_noise, cfg.rrv_noise,
                cfg.outlier_fraction, cfg.fov_azimuth, cfg.fov_elevation, cfg.max_range);
  return buf;
}

DatasetSummary generate_dataset(const SceneConfig& cfg, std::size_t n_pairs, const SplitRatios& ratios,
                                const std::string& out_dir) {
  validate_scene_config(cfg);
  if (ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw Error(ErrorCode::ConfigInvalid, "split ratios must be non-negative and sum to 1");
  }
  namespace fs = std::filesystem;
  DatasetSummary summary;
  const std::size_t n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n_pairs)));
  const std::size_t n_val = std::min(
      n_pairs - n_train, static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n_pairs))));
  summary.counts = {n_train, n_val, n_pairs - n_train - n_val};

  static const char* kSplits[3] = {"train", "val", "test"};
  std::string top = scene_config_text(cfg);
  top += "pairs: " + std::to_string(n_pairs) + "\n";
  std::size_t next = 0;
  try {
    fs::create_directories(out_dir);
    for (int s = 0; s < 3; ++s) {
      const fs::path dir = fs::path(out_dir) / kSplits[s];
      fs::create_directories(dir);
      std::string manifest = scene_config_text(cfg);
      manifest += "split: " + std::string(kSplits[s]) + "\nrecords:\n";
      for (std::size_t k = 0; k < summary.counts[s]; ++k, ++next) {
        char name[32];
        std::snprintf(name, sizeof(name), "pair_%06zu.r4df", next);
        const GeneratedPair g = generate_pair(cfg, next);
        write_record((dir / name).string(), g.pair, g.labels);
        manifest += std::string(name) + "\n";
      }
      std::ofstream(dir / "manifest.txt", std::ios::binary | std::ios::trunc) << manifest;
      top += std::string(kSplits[s]) + ": " + std::to_string(summary.counts[s]) + "\n";
    }
    const fs::path top_path = fs::path(out_dir) / "manifest.txt";
    std::ofstream out(top_path, std::ios::binary | std::ios::trunc);
    out << top;
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + top_path.string());
    summary.manifest_path = top_path.string();
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::IoError, e.what());
  }
  return summary;
}

}  // namespace raflow
