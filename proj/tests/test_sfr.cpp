#include <doctest.h>

#include <cmath>

#include "raflow/geometry.hpp"
#include "raflow/rofe.hpp"
#include "raflow/sfr.hpp"
#include "raflow/synth.hpp"
#include "support.hpp"

using namespace raflow;
using raflow::testing::error_code;
using raflow::testing::gradient_error;
using raflow::testing::point;

namespace {

SceneConfig clean_scene(std::size_t movers, std::size_t points_per_mover) {
  SceneConfig cfg;
  cfg.position_noise = 0.0;
  cfg.rrv_noise = 0.0;
  cfg.outlier_fraction = 0.0;
  cfg.n_movers = movers;
  cfg.points_per_mover = points_per_mover;
  cfg.ego_speed = {8.0, 12.0};
  cfg.mover_speed = {3.0, 8.0};
  return cfg;
}

RigidTransform some_motion() {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(0.05, Eigen::Vector3d(0.1, 0.2, 1.0).normalized()).toRotationMatrix();
  t.translation = {-0.8, 0.1, 0.02};
  return t;
}

}  // namespace

TEST_CASE("static scene with exact RRV is entirely static") {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const GeneratedPair g = generate_pair(clean_scene(0, 0), k);
    const MaskResult m = static_mask(g.pair, g.labels.gt_flow, 0.15);
    for (std::size_t i = 0; i < m.mask.size(); ++i) {
      CHECK(m.residuals[i] < 1e-9);
      CHECK(m.mask[i]);
    }
  }
}

TEST_CASE("a stationary sensor isolates the mover through the absolute branch") {
  SceneConfig cfg = clean_scene(1, 4);
  cfg.ego_speed = {0.0, 0.0};
  cfg.ego_yaw_rate = {0.0, 0.0};
  for (std::uint64_t k = 0; k < 5; ++k) {
    const GeneratedPair g = generate_pair(cfg, k);
    const MaskResult m = static_mask(g.pair, g.labels.gt_flow, 0.15);
    for (std::size_t i = 0; i < m.mask.size(); ++i) {
      if (g.labels.gt_moving[i]) {
        CHECK_FALSE(m.mask[i]);
        CHECK(m.residuals[i] > 0.15);
      } else {
        CHECK(g.pair.source.points[i].rrv == 0.0);
        CHECK(m.mask[i]);
      }
    }
  }
}

TEST_CASE("the static threshold is inclusive") {
  const MaskThresholds th;
  const double e = relative_residual(0.375, 2.5, th);
  CHECK(e == 0.15);
  CHECK(is_static_residual(e, 0.15));
  CHECK_FALSE(is_static_residual(std::nextafter(0.15, 1.0), 0.15));
  // Absolute branch: |r| = eta_abs maps exactly onto zeta.
  CHECK(relative_residual(-0.05, 0.0, th) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(relative_residual(0.06, 5e-4, th) > 0.15);
}

TEST_CASE("residuals depend only on the product of RRV and dt") {
  const GeneratedPair g = generate_pair(clean_scene(2, 6), 1);
  FramePair scaled = g.pair;
  scaled.dt *= 4.0;
  for (auto& p : scaled.source.points) p.rrv /= 4.0;
  const MaskResult a = static_mask(g.pair, g.labels.gt_flow, 0.15);
  const MaskResult b = static_mask(scaled, g.labels.gt_flow, 0.15);
  for (std::size_t i = 0; i < a.residuals.size(); ++i) {
    CHECK(b.residuals[i] == doctest::Approx(a.residuals[i]).epsilon(1e-12));
  }
  CHECK(a.mask == b.mask);
}

TEST_CASE("static mask needs three points") {
  FramePair pair;
  pair.source.points = {point(5, 0, 0), point(6, 1, 0)};
  pair.target = pair.source;
  CHECK(error_code([&] { static_mask(pair, SceneFlow::Zero(2, 3), 0.15); }) == ErrorCode::TooFewPoints);
}

TEST_CASE("refine with an all-static mask and rigid coarse flow") {
  CounterRng rng(2);
  FramePair pair;
  pair.source = testing::random_frame(20, rng);
  pair.target = pair.source;
  const RigidTransform t = some_motion();
  const SceneFlow coarse = transform_to_flow(t, pair.source);
  const SfrOutput out = refine(pair, coarse, StaticMask(20, true));
  CHECK_FALSE(out.fallback);
  CHECK((out.final_flow - coarse).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((out.ego_motion.rotation - t.rotation).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((out.ego_motion.translation - t.translation).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(out.ego_motion.is_valid());
}

TEST_CASE("refine falls back without enough static points") {
  CounterRng rng(3);
  FramePair pair;
  pair.source = testing::random_frame(10, rng);
  pair.target = pair.source;
  const SceneFlow coarse = testing::random_flow(10, rng);
  for (std::size_t n_static : {0, 2}) {
    StaticMask mask(10, false);
    for (std::size_t i = 0; i < n_static; ++i) mask[i] = true;
    const SfrOutput out = refine(pair, coarse, mask);
    CHECK(out.fallback);
    CHECK(out.final_flow == coarse);
    CHECK(out.ego_motion.rotation == Eigen::Matrix3d::Identity());
    CHECK(out.ego_motion.translation == Eigen::Vector3d::Zero());
  }
}

TEST_CASE("final flow takes the rigid row for static points and the coarse row otherwise") {
  CounterRng rng(4);
  FramePair pair;
  pair.source = testing::random_frame(15, rng);
  pair.target = pair.source;
  const SceneFlow coarse = testing::random_flow(15, rng);
  StaticMask mask(15);
  for (std::size_t i = 0; i < 15; ++i) mask[i] = i % 3 != 0;
  const SfrOutput out = refine(pair, coarse, mask);
  const SceneFlow rigid = transform_to_flow(out.ego_motion, pair.source);

  Points3 src(0, 3), dst(0, 3);
  for (std::size_t i = 0; i < 15; ++i) {
    if (!mask[i]) continue;
    src.conservativeResize(src.rows() + 1, 3);
    dst.conservativeResize(dst.rows() + 1, 3);
    src.row(src.rows() - 1) = pair.source.points[i].position.transpose();
    dst.row(dst.rows() - 1) = pair.source.points[i].position.transpose() + coarse.row(i);
  }
  const RigidTransform reference = kabsch(src, dst);
  CHECK((reference.rotation - out.ego_motion.rotation).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((reference.translation - out.ego_motion.translation).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t i = 0; i < 15; ++i) {
    if (mask[i]) {
      CHECK((out.final_flow.row(i) - rigid.row(i)).cwiseAbs().maxCoeff() < 1e-12);
    } else {
      CHECK(out.final_flow.row(i) == coarse.row(i));
    }
  }
}

TEST_CASE("refine is differentiable with respect to the coarse flow") {
  CounterRng rng(5);
  FramePair pair;
  pair.source = testing::random_frame(12, rng);
  pair.target = pair.source;
  StaticMask mask(12, true);
  mask[3] = mask[7] = false;
  ad::Tensor coarse = flow_tensor(testing::random_flow(12, rng), true);
  const ad::Tensor w = testing::random_constant({12, 3}, rng);
  CHECK(gradient_error([&] { return ad::sum(ad::mul(refine(pair, coarse, mask).final_flow, w)); }, {coarse}) < 1e-5);
}

TEST_CASE("motion segmentation") {
  CHECK(motion_segmentation(StaticMask(4, true)).moving.empty());
  const MotionSplit s = motion_segmentation({true, false, true});
  CHECK(s.moving == std::vector<std::size_t>{1});
  CHECK(s.stationary == std::vector<std::size_t>{0, 2});
  CHECK(moving_flags({true, false}) == std::vector<bool>{false, true});

  const GeneratedPair g = generate_pair(clean_scene(2, 4), 0);
  const MaskResult m = static_mask(g.pair, g.labels.gt_flow, 0.15);
  std::size_t gt_moving = 0;
  for (bool b : g.labels.gt_moving) gt_moving += b;
  CHECK(motion_segmentation(m.mask).moving.size() == gt_moving);
}
