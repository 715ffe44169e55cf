#include <doctest.h>

#include <filesystem>
#include <limits>

#include "raflow/synth.hpp"
#include "raflow/train.hpp"
#include "support.hpp"

using namespace raflow;
using raflow::testing::error_code;

namespace {

HyperParams small_hp() {
  HyperParams hp;
  hp.n_scales = 2;
  hp.c_local = 4;
  hp.c_cor = 8;
  hp.radii = {2.0, 8.0};
  return hp;
}

PairRecord record(const SceneConfig& cfg, std::uint64_t index) {
  GeneratedPair g = generate_pair(cfg, index);
  return {std::move(g.pair), std::move(g.labels)};
}

PairRecord tiny(std::uint64_t seed, std::size_t n = 32) {
  CounterRng rng(seed, 99);
  return downsample(record(SceneConfig{.seed = seed}, 0), n, rng);
}

double doppler_residual(const RadarPoint& p, const Eigen::Vector3d& flow, double dt) {
  return p.rrv * dt - flow.dot(p.position) / p.position.norm();
}

}  // namespace

TEST_CASE("learning rate schedule") {
  const TrainConfig cfg;
  CHECK(learning_rate(cfg, 0) == 0.001);
  CHECK(std::abs(learning_rate(cfg, 3) - 0.001 * 0.9 * 0.9 * 0.9) < 1e-18);
}

TEST_CASE("training configuration errors") {
  TrainConfig cfg;
  cfg.lr = 0.0;
  CHECK(error_code([&] { validate_train_config(cfg); }) == ErrorCode::ConfigInvalid);
  cfg = TrainConfig{};
  cfg.lr_decay = 1.5;
  CHECK(error_code([&] { validate_train_config(cfg); }) == ErrorCode::ConfigInvalid);
  cfg.lr_decay = 0.0;
  CHECK(error_code([&] { validate_train_config(cfg); }) == ErrorCode::ConfigInvalid);

  RofeModel m = RofeModel::create(small_hp(), 1);
  const std::vector<PairRecord> one = {tiny(1)};
  CHECK(error_code([&] { train(m, {}, one, TrainConfig{}); }) == ErrorCode::DatasetEmpty);
  CHECK(error_code([&] { train(m, one, {}, TrainConfig{}); }) == ErrorCode::DatasetEmpty);
}

TEST_CASE("downsampling chooses distinct points and carries their labels") {
  const PairRecord full = record(SceneConfig{.seed = 2}, 0);
  CounterRng rng(2);
  const PairRecord d = downsample(full, 64, rng);
  CHECK(d.pair.source.size() == 64);
  CHECK(d.pair.target.size() == 64);
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < 64; ++k) {
    // Ascending order: each chosen point is found after the previous one.
    while (cursor < full.pair.source.size() &&
           full.pair.source.points[cursor].position != d.pair.source.points[k].position) {
      ++cursor;
    }
    REQUIRE(cursor < full.pair.source.size());
    CHECK(full.labels.gt_flow.row(cursor) == d.labels.gt_flow.row(k));
    CHECK(full.labels.gt_moving[cursor] == d.labels.gt_moving[k]);
    CHECK(full.labels.valid[cursor] == d.labels.valid[k]);
    ++cursor;
  }
  CounterRng again(2);
  const PairRecord all = downsample(full, 10000, again);
  CHECK(all.pair.source.size() == full.pair.source.size());
  CHECK(all.labels.gt_flow == full.labels.gt_flow);
}

TEST_CASE("augmentation") {
  SceneConfig cfg{.seed = 3};
  cfg.position_noise = 0.0;
  cfg.rrv_noise = 0.0;
  const PairRecord rec = record(cfg, 0);

  const PairRecord same = augment(rec, 5, 0.0, 0.0);
  for (std::size_t i = 0; i < rec.pair.source.size(); ++i)
    CHECK(same.pair.source.points[i].position == rec.pair.source.points[i].position);
  CHECK(same.labels.gt_flow == rec.labels.gt_flow);

  const PairRecord a = augment(rec, 7, deg_to_rad(10.0), 1.0), b = augment(rec, 7, deg_to_rad(10.0), 1.0);
  for (std::size_t i = 0; i < rec.pair.source.size(); ++i) {
    CHECK(a.pair.source.points[i].position == b.pair.source.points[i].position);
    CHECK(a.pair.source.points[i].rrv == rec.pair.source.points[i].rrv);
  }
  CHECK(a.labels.gt_flow == b.labels.gt_flow);

  // Labels move with the scene: the recorded ego motion still carries every
  // static source point onto its flow target.
  for (std::size_t i = 0; i < rec.pair.source.size(); ++i) {
    if (!rec.labels.valid[i] || rec.labels.gt_moving[i]) continue;
    const Eigen::Vector3d x = a.pair.source.points[i].position;
    CHECK((a.labels.gt_ego.apply(x) - x - a.labels.gt_flow.row(i).transpose()).norm() < 1e-9);
  }

  // A rotation about the sensor keeps the Doppler relation exact.
  const PairRecord yawed = augment(rec, 9, deg_to_rad(10.0), 0.0);
  for (std::size_t i = 0; i < rec.pair.source.size(); ++i) {
    if (!rec.labels.valid[i]) continue;
    const double before = doppler_residual(rec.pair.source.points[i], rec.labels.gt_flow.row(i).transpose(), rec.pair.dt);
    const double after =
        doppler_residual(yawed.pair.source.points[i], yawed.labels.gt_flow.row(i).transpose(), rec.pair.dt);
    CHECK(std::abs(after - before) < 1e-12);
  }
}

TEST_CASE("one optimizer step lowers the loss on tiny pairs") {
  const TrainConfig cfg;
  int lowered = 0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    RofeModel m = RofeModel::create(default_hyperparams(), 100 + t);
    const PairRecord rec = tiny(100 + t);
    Adam adam(m);
    const double before = train_step(m, adam, {rec}, cfg.lr, cfg).total;
    ForwardOptions opts;
    opts.warn_on_fallback = false;
    const double after = total_loss(rec.pair, forward(m, rec.pair, opts).final_flow, m.hyperparams()).total.item();
    lowered += after < before;
  }
  MESSAGE("loss lowered in " << lowered << " of " << trials << " trials");
  CHECK(lowered * 10 >= trials * 9);
}

TEST_CASE("every trainable tensor receives gradient") {
  RofeModel m = RofeModel::create(default_hyperparams(), 4);
  const PairRecord rec = tiny(4);
  const TrainConfig cfg;
  Adam adam(m);
  // The zero output layer blocks everything upstream until the first update.
  train_step(m, adam, {rec}, cfg.lr, cfg);
  train_step(m, adam, {rec}, cfg.lr, cfg);
  for (const auto& p : m.parameters()) {
    double norm = 0.0;
    bool finite = true;
    for (double g : p.tensor.grad()) {
      norm += g * g;
      finite = finite && std::isfinite(g);
    }
    CAPTURE(p.name);
    CHECK(finite);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("runaway updates stop with a diagnostic") {
  RofeModel m = RofeModel::create(small_hp(), 5);
  const PairRecord rec = tiny(5);
  TrainConfig cfg;
  Adam adam(m);
  const double huge = std::numeric_limits<double>::max();
  train_step(m, adam, {rec}, huge, cfg);
  CHECK(error_code([&] { train_step(m, adam, {rec}, huge, cfg); }) == ErrorCode::DivergedLoss);
}

TEST_CASE("training is deterministic and keeps the best validation model") {
  SceneConfig scene{.seed = 6};
  const std::vector<PairRecord> train_set = {record(scene, 0), record(scene, 1), record(scene, 2)};
  const std::vector<PairRecord> val_set = {record(scene, 3), record(scene, 4)};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.sample_points = 64;
  cfg.seed = 6;
  cfg.lr = 0.01;

  const auto dir = std::filesystem::temp_directory_path() / "raflow_test_train";
  std::filesystem::remove_all(dir);
  RofeModel a = RofeModel::create(small_hp(), 6), b = RofeModel::create(small_hp(), 6);
  const TrainResult ra = train(a, train_set, val_set, cfg, dir.string());
  const TrainResult rb = train(b, train_set, val_set, cfg);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(snapshot(ra.best) == snapshot(rb.best));

  REQUIRE(ra.epochs.size() == 3);
  double lowest = ra.epochs.front().val.avg_rne;
  for (const auto& e : ra.epochs) lowest = std::min(lowest, e.val.avg_rne);
  CHECK(ra.best_val_rne == lowest);
  CHECK(ra.best_val_rne <= ra.epochs.back().val.avg_rne);
  CHECK(evaluate(ra.best, val_set, ForwardOptions{.warn_on_fallback = false}).avg_rne == ra.best_val_rne);

  CHECK(std::filesystem::exists(dir / "best.r4dc"));
  CHECK(std::filesystem::exists(dir / "last.r4dc"));
  CHECK(snapshot(load_checkpoint((dir / "last.r4dc").string())) == snapshot(a));
  std::filesystem::remove_all(dir);
}
