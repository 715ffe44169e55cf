#include <doctest.h>

#include "raflow/baselines.hpp"
#include "raflow/geometry.hpp"
#include "raflow/synth.hpp"
#include "support.hpp"

using namespace raflow;
using raflow::testing::error_code;

namespace {

RadarFrame moved(const RadarFrame& f, const RigidTransform& t) {
  RadarFrame out = f;
  for (auto& p : out.points) p.position = t.apply(p.position);
  return out;
}

SceneConfig quiet(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.seed = seed;
  cfg.position_noise = 0.0;
  cfg.rrv_noise = 0.0;
  cfg.outlier_fraction = 0.0;
  return cfg;
}

double mean_error(const SceneFlow& a, const SceneFlow& b, const std::vector<bool>& pick) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!pick[i]) continue;
    sum += (a.row(i) - b.row(i)).norm();
    ++n;
  }
  return sum / n;
}

}  // namespace

TEST_CASE("icp on identical frames") {
  CounterRng rng(1);
  FramePair pair;
  pair.source = testing::random_frame(30, rng, 20.0);
  pair.target = pair.source;
  const IcpResult r = icp(pair);
  CHECK(r.iterations <= 2);
  CHECK((r.transform.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-9);
  CHECK(r.transform.translation.norm() < 1e-9);
  CHECK(r.flow.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("icp recovers a constructed rigid motion") {
  CounterRng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    FramePair pair;
    pair.source = testing::random_frame(40, rng, 20.0);
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    RigidTransform t;
    t.rotation = Eigen::AngleAxisd(rng.uniform(-10.0, 10.0) * M_PI / 180.0, axis.normalized()).toRotationMatrix();
    t.translation = Eigen::Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1));
    pair.target = moved(pair.source, t);
    const IcpResult r = icp(pair, 100, 1e-12);
    CHECK((r.transform.rotation - t.rotation).norm() < 1e-6);
    CHECK((r.transform.translation - t.translation).norm() < 1e-6);
  }
}

TEST_CASE("icp objective never increases") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const GeneratedPair g = generate_pair(SceneConfig{.seed = seed});
    const IcpResult r = icp(g.pair);
    REQUIRE(r.objective.size() >= 1);
    for (std::size_t k = 1; k < r.objective.size(); ++k) CHECK(r.objective[k] <= r.objective[k - 1]);
  }
}

TEST_CASE("icp leaves mover points worse than static points") {
  SceneConfig cfg = quiet(3);
  cfg.n_movers = 1;
  for (std::uint64_t index = 0; index < 5; ++index) {
    const GeneratedPair g = generate_pair(cfg, index);
    const IcpResult r = icp(g.pair);
    std::vector<bool> stat(g.labels.gt_moving.size());
    for (std::size_t i = 0; i < stat.size(); ++i) stat[i] = !g.labels.gt_moving[i];
    CHECK(mean_error(r.flow, g.labels.gt_flow, stat) < mean_error(r.flow, g.labels.gt_flow, g.labels.gt_moving));
  }
}

TEST_CASE("rigid-only flow") {
  SceneConfig cfg = quiet(4);
  cfg.n_movers = 0;
  cfg.ego_speed = {0.0, 0.0};
  cfg.ego_yaw_rate = {0.0, 0.0};
  GeneratedPair g = generate_pair(cfg);
  g.pair.target = g.pair.source;
  const std::vector<bool> all(g.pair.source.size(), true);
  CHECK(mean_error(rigid_only_flow(g.pair), g.labels.gt_flow, all) < 1e-9);

  // Parked sensor: the rigid fit stays near the identity, so every mover is
  // missed by its full displacement.
  cfg.n_movers = 2;
  cfg.mover_speed = {6.0, 8.0};
  g = generate_pair(cfg);
  const SceneFlow flow = rigid_only_flow(g.pair);
  for (std::size_t i = 0; i < g.pair.source.size(); ++i) {
    if (!g.labels.gt_moving[i]) continue;
    const double displacement = g.labels.gt_flow.row(i).norm();
    CHECK(std::abs((flow.row(i) - g.labels.gt_flow.row(i)).norm() - displacement) < 0.1 * displacement);
  }

  g = generate_pair(SceneConfig{.seed = 5});
  const IcpResult one = icp(g.pair, 1);
  CHECK(rigid_only_flow(g.pair) == one.flow);
}

TEST_CASE("baselines need three points per frame") {
  FramePair pair;
  pair.source.points = {testing::point(5, 0, 0), testing::point(6, 1, 0)};
  pair.target = pair.source;
  CHECK(error_code([&] { icp(pair); }) == ErrorCode::TooFewPoints);
  CHECK(error_code([&] { rigid_only_flow(pair); }) == ErrorCode::TooFewPoints);
}
