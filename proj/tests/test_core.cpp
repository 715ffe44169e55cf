#include <doctest.h>

#include <cmath>
#include <limits>

#include "raflow/core.hpp"
#include "support.hpp"

using namespace raflow;
using raflow::testing::error_code;
using raflow::testing::point;

TEST_CASE("default hyperparameters") {
  const HyperParams hp = default_hyperparams();
  CHECK(hp.n_scales == 4);
  CHECK(hp.c_local == 64);
  CHECK(hp.c_cor == 512);
  CHECK(hp.radii == std::vector<double>{2.0, 4.0, 8.0, 16.0});
  CHECK(hp.zeta == 0.15);
  CHECK(hp.delta == 0.005);
  CHECK(hp.epsilon == 0.1);
  CHECK(hp.alpha == 0.5);
  CHECK(hp.n_neighbors == 8);
  CHECK_NOTHROW(validate_hyperparams(hp));
}

TEST_CASE("hyperparameters round-trip through the config document") {
  const HyperParams hp = default_hyperparams();
  CHECK(hyperparams_from_json(hyperparams_to_json(hp)) == hp);

  HyperParams odd;
  odd.n_scales = 2;
  odd.radii = {0.1 + 0.2, 1.0 / 3.0};
  odd.zeta = 0.123456789012345678;
  odd.alpha = 1e-300;
  CHECK(hyperparams_from_json(hyperparams_to_json(odd)) == odd);
}

TEST_CASE("config validation") {
  CHECK(error_code([] { hyperparams_from_json(R"({"zeta": 0.2, "bogus": 1})"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_code([] { hyperparams_from_json(R"({"radii": [2, 8, 4, 16]})"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_code([] { hyperparams_from_json(R"({"delta": -1})"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_code([] { hyperparams_from_json("not json"); }) == ErrorCode::ConfigInvalid);
  CHECK(error_code([] { hyperparams_from_json(R"({"n_scales": "four"})"); }) == ErrorCode::ConfigInvalid);
  CHECK(hyperparams_from_json(R"({"zeta": 0.3})").zeta == 0.3);
}

TEST_CASE("frame validation") {
  RadarFrame f;
  f.points = {point(1, 0, 0), point(0, 2, 0), point(3, 1, -1)};
  CHECK(&validate_frame(f) == &f);

  RadarFrame nan = f;
  nan.points[1].position.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK(error_code([&] { validate_frame(nan); }) == ErrorCode::NonFinite);

  CHECK(error_code([] { validate_frame(RadarFrame{}); }) == ErrorCode::EmptyFrame);

  RadarFrame origin = f;
  origin.points[2].position.setZero();
  CHECK(error_code([&] { validate_frame(origin); }) == ErrorCode::OriginPoint);
}

TEST_CASE("rigid transform composition and inverse keep the invariants") {
  CounterRng rng(11);
  for (int k = 0; k < 50; ++k) {
    RigidTransform a, b;
    a.rotation = testing::random_rotation(rng);
    b.rotation = testing::random_rotation(rng);
    a.translation = {rng.normal(), rng.normal(), rng.normal()};
    b.translation = {rng.normal(), rng.normal(), rng.normal()};
    CHECK(a.is_valid());
    CHECK((a * b).is_valid());
    const RigidTransform id = a * a.inverse();
    CHECK((id.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(id.translation.norm() < 1e-12);
    const Eigen::Vector3d p(rng.normal(), rng.normal(), rng.normal());
    CHECK(((a * b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
  }
  RigidTransform mirror;
  mirror.rotation = Eigen::Vector3d(1, 1, -1).asDiagonal();
  CHECK_FALSE(mirror.is_valid());
}
