#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "raflow/baselines.hpp"
#include "raflow/cli.hpp"
#include "raflow/geometry.hpp"
#include "raflow/losses.hpp"
#include "raflow/sfr.hpp"
#include "raflow/synth.hpp"
#include "raflow/train.hpp"
#include "support.hpp"

using namespace raflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

/// Runs the unit-test cases matching `filter` and reports their tally.
Outcome run_cases(const char* filter) {
  doctest::Context ctx;
  ctx.setOption("test-case", filter);
  std::ostringstream sink;
  ctx.setCout(&sink);
  const int failed = ctx.run();
  std::string tally;
  std::istringstream lines(sink.str());
  for (std::string l; std::getline(lines, l);)
    if (l.find("test cases:") != std::string::npos) tally = l.substr(l.find("test cases:"));
  if (failed != 0) std::cerr << sink.str();
  return {failed == 0 && !tally.empty(), tally};
}

// ------------------------------------------------------------------ geometry

Outcome geometry_oracles() {
  const auto t0 = Clock::now();
  CounterRng rng(1);
  double worst_r = 0.0, worst_t = 0.0;
  int corrected = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Points3 src(10, 3);
    for (Eigen::Index i = 0; i < 10; ++i) {
      src.row(i) = Eigen::RowVector3d(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    }
    // Every fourth cluster is planar: the SVD then leaves the sign of the
    // third axis free and the determinant fix has to pick it.
    if (trial % 4 == 0) src.col(2).setZero();
    RigidTransform t;
    t.rotation = testing::random_rotation(rng);
    t.translation = Eigen::Vector3d(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    Points3 dst = (src * t.rotation.transpose()).rowwise() + t.translation.transpose();

    const Eigen::RowVector3d ms = src.colwise().mean(), md = dst.colwise().mean();
    const Eigen::Matrix3d cov = (src.rowwise() - ms).transpose() * (dst.rowwise() - md);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    corrected += (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0;

    const RigidTransform fit = kabsch(src, dst);
    worst_r = std::max(worst_r, (fit.rotation - t.rotation).norm());
    worst_t = std::max(worst_t, (fit.translation - t.translation).norm());
  }

  // Mirrored target: the best proper rotation, never a reflection.
  Points3 src(10, 3);
  for (Eigen::Index i = 0; i < 10; ++i) src.row(i) = Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
  Points3 mirrored = src;
  mirrored.col(0) *= -1.0;
  const double det = kabsch(src, mirrored).rotation.determinant();

  const double secs = seconds_since(t0);
  const bool pass = worst_r < 1e-9 && worst_t < 1e-9 && corrected > 0 && std::abs(det - 1.0) < 1e-12 && secs < 5.0;
  return {pass, fmt("1000 fits, max rotation err %.2e, max translation err %.2e, %d reflection corrections, "
                    "mirrored det %+.3f, %.2f s",
                    worst_r, worst_t, corrected, det, secs)};
}

// ---------------------------------------------------------------- resolution

Outcome resolution_math() {
  const MetricConfig mc;
  CounterRng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Vector3d p(rng.uniform(1.0, 70.0), rng.uniform(-40.0, 40.0), rng.uniform(-5.0, 5.0));
    const Spherical s = cartesian_to_spherical(p);
    const double h = 1e-6;
    Eigen::Matrix3d j;
    for (int c = 0; c < 3; ++c) {
      Spherical up = s, down = s;
      double* fu = c == 0 ? &up.range : c == 1 ? &up.azimuth : &up.elevation;
      double* fd = c == 0 ? &down.range : c == 1 ? &down.azimuth : &down.elevation;
      *fu += h;
      *fd -= h;
      j.col(c) = (spherical_to_cartesian(up) - spherical_to_cartesian(down)) / (2.0 * h);
    }
    for (const SphericalResolution& res : {mc.radar_res, mc.lidar_res}) {
      const Eigen::Vector3d steps(res.d_range, res.d_azimuth, res.d_elevation);
      const double expected = (j.cwiseAbs() * steps).norm();
      worst = std::max(worst, std::abs(point_resolution(p, res) - expected) / expected);
    }
  }
  return {worst < 1e-6, fmt("1000 points x 2 sensors, max relative err %.2e", worst)};
}

// ----------------------------------------------------------- analytic zeros

SceneConfig clean_scene(std::uint64_t seed, double rrv_noise) {
  SceneConfig cfg;
  cfg.seed = seed;
  cfg.n_movers = 2;
  cfg.points_per_mover = 4;
  cfg.ego_speed = {8.0, 12.0};
  cfg.mover_speed = {3.0, 8.0};
  cfg.position_noise = 0.0;
  cfg.rrv_noise = rrv_noise;
  cfg.outlier_fraction = 0.0;
  return cfg;
}

Outcome analytic_zeros() {
  const HyperParams hp;
  double worst_rd = 0.0, worst_sc = 0.0, worst_ss = 0.0;
  CounterRng rng(3);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.position_noise = 0.0;
    cfg.rrv_noise = 0.0;
    cfg.outlier_fraction = 0.0;
    GeneratedPair g = generate_pair(cfg);
    const SceneFlow& gt = g.labels.gt_flow;
    worst_rd = std::max(worst_rd, radial_displacement_loss(g.pair, gt));

    // Target within sqrt(ε) of the warped source, point for point.
    FramePair near = g.pair;
    near.target = warp(g.pair.source, gt);
    for (auto& p : near.target.points) {
      Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
      p.position += d.normalized() * rng.uniform(0.0, 0.9 * std::sqrt(hp.epsilon));
    }
    worst_sc = std::max(worst_sc, soft_chamfer_loss(near, flow_tensor(gt), hp.delta, hp.epsilon).loss.item());

    SceneFlow constant(gt.rows(), 3);
    constant.rowwise() = Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
    worst_ss = std::max(worst_ss, smoothness_loss(g.pair.source, flow_tensor(constant), hp.alpha, hp.n_neighbors).item());
  }
  return {worst_rd < 1e-9 && worst_sc == 0.0 && worst_ss == 0.0,
          fmt("20 pairs, max L_rd %.2e, max soft Chamfer %.2e, max smoothness %.2e", worst_rd, worst_sc, worst_ss)};
}

// ------------------------------------------------------- static-mask fidelity

Outcome mask_fidelity() {
  auto accuracy = [](double rrv_noise, int& perfect) {
    std::size_t right = 0, total = 0;
    perfect = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      const GeneratedPair g = generate_pair(clean_scene(seed, rrv_noise));
      const MaskResult m = static_mask(g.pair, g.labels.gt_flow, 0.15);
      std::size_t r = 0, n = 0;
      for (std::size_t i = 0; i < m.mask.size(); ++i) {
        if (!g.labels.valid[i]) continue;
        r += m.mask[i] == !g.labels.gt_moving[i];
        ++n;
      }
      perfect += r == n;
      right += r;
      total += n;
    }
    return static_cast<double>(right) / static_cast<double>(total);
  };
  int perfect_clean = 0, perfect_noisy = 0;
  const double clean = accuracy(0.0, perfect_clean);
  const double noisy = accuracy(0.05, perfect_noisy);
  return {perfect_clean == 50 && noisy >= 0.95,
          fmt("noiseless: %d/50 scenes at 100%% (accuracy %.4f); rrv noise 0.05 m/s: accuracy %.4f over 50 scenes",
              perfect_clean, clean, noisy)};
}

// ---------------------------------------------------------------- end to end

struct Split {
  std::vector<PairRecord> train, val, test;
};

Split make_split(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.seed = seed;
  Split s;
  auto add = [&](std::vector<PairRecord>& out, std::uint64_t first, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      GeneratedPair g = generate_pair(cfg, first + i);
      out.push_back({std::move(g.pair), std::move(g.labels)});
    }
  };
  add(s.train, 0, 300);
  add(s.val, 1000, 50);
  add(s.test, 2000, 50);
  return s;
}

HyperParams desk_hyperparams() {
  HyperParams hp;
  hp.n_scales = 2;
  hp.c_local = 8;
  hp.c_cor = 32;
  hp.radii = {2.0, 8.0};
  return hp;
}

struct Scores {
  EvalReport report;
  double mov_epe = 0.0;
};

Scores score(const std::vector<PairRecord>& test, auto&& predict, bool with_mask) {
  MetricAccumulator acc;
  for (const PairRecord& r : test) {
    const Prediction p = predict(r);
    const std::vector<bool> moving = moving_flags(p.static_mask);
    acc.add(r.pair.source, p.flow, r.labels, with_mask ? &moving : nullptr);
  }
  return {acc.report(), acc.mov_epe().value_or(0.0)};
}

struct Trained {
  RofeModel model;
  double seconds = 0.0;
};

Trained train_variant(const Split& s, std::uint64_t seed, const InputChannels& channels, bool hard,
                      std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.loss.hard_chamfer = hard;
  RofeModel m = RofeModel::create(desk_hyperparams(), seed, channels);
  const auto t0 = Clock::now();
  TrainResult r = train(m, s.train, s.val, tc);
  return {std::move(r.best), seconds_since(t0)};
}

Scores model_scores(const RofeModel& m, const std::vector<PairRecord>& test, bool use_sfr) {
  ForwardOptions opts;
  opts.use_sfr = use_sfr;
  opts.warn_on_fallback = false;
  return score(test, [&](const PairRecord& r) { return infer(m, r.pair, opts); }, use_sfr);
}

Outcome end_to_end(std::size_t seeds, std::size_t epochs) {
  int a = 0, b = 0, c = 0, d = 0, e = 0;
  double slowest = 0.0;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    const Split s = make_split(seed);
    const Scores rigid = score(s.test, [](const PairRecord& r) { return Prediction{rigid_only_flow(r.pair), {}, {}}; },
                               false);
    const Scores icp_scores = score(
        s.test, [](const PairRecord& r) { return Prediction{icp(r.pair).flow, {}, {}}; }, false);

    const Trained full = train_variant(s, seed, {}, false, epochs);
    const Trained hard = train_variant(s, seed, {}, true, epochs);
    const Trained no_rrv = train_variant(s, seed, InputChannels{false, true, true}, false, epochs);
    slowest = std::max({slowest, full.seconds, hard.seconds, no_rrv.seconds});

    const Scores with_sfr = model_scores(full.model, s.test, true);
    const Scores without_sfr = model_scores(full.model, s.test, false);
    const Scores hard_scores = model_scores(hard.model, s.test, true);
    const Scores no_rrv_scores = model_scores(no_rrv.model, s.test, true);

    const bool oa = with_sfr.report.avg_epe < rigid.report.avg_epe;
    const bool ob = with_sfr.mov_epe < icp_scores.mov_epe;
    const bool oc = with_sfr.report.stat_rne.value_or(0) <= without_sfr.report.stat_rne.value_or(0);
    const bool od = with_sfr.report.avg_rne < hard_scores.report.avg_rne;
    const bool oe = no_rrv_scores.report.avg_rne > with_sfr.report.avg_rne;
    a += oa;
    b += ob;
    c += oc;
    d += od;
    e += oe;
    std::printf(
        "# seed %llu: EPE model %.4f rigid %.4f | MovEPE model %.4f ICP %.4f | StatRNE SFR %.4f no-SFR %.4f | "
        "RNE soft %.4f hard %.4f no-RRV %.4f | train %.0f/%.0f/%.0f s | %d%d%d%d%d\n",
        static_cast<unsigned long long>(seed), with_sfr.report.avg_epe, rigid.report.avg_epe, with_sfr.mov_epe,
        icp_scores.mov_epe, with_sfr.report.stat_rne.value_or(0), without_sfr.report.stat_rne.value_or(0),
        with_sfr.report.avg_rne, hard_scores.report.avg_rne, no_rrv_scores.report.avg_rne, full.seconds, hard.seconds,
        no_rrv.seconds, oa, ob, oc, od, oe);
    std::fflush(stdout);
  }
  const int need = static_cast<int>((4 * seeds + 4) / 5);
  const bool pass = a >= need && b >= need && c >= need && d >= need && e >= need && slowest < 1800.0;
  return {pass, fmt("orderings held in (a) %d (b) %d (c) %d (d) %d (e) %d of %zu seeds, %zu epochs, "
                    "slowest training %.0f s",
                    a, b, c, d, e, seeds, epochs, slowest)};
}

// --------------------------------------------------------------- determinism

int quiet_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "raflow");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  std::ostringstream sink;
  std::streambuf* old_out = std::cout.rdbuf(sink.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(sink.rdbuf());
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "raflow_acceptance_determinism";
  fs::remove_all(root);
  auto pipeline = [&](const std::string& name) {
    const fs::path dir = root / name;
    const std::string data = (dir / "data").string(), run = (dir / "run").string();
    int rc = quiet_cli({"generate", "--pairs", "20", "--seed", "5", "--out", data});
    rc |= quiet_cli({"train", "--data", data, "--out", run, "--epochs", "2", "--threads", "1", "--n-scales", "2",
                     "--c-local", "8", "--c-cor", "32", "--radii", "2", "8", "--seed", "5"});
    rc |= quiet_cli({"eval", "--data", data + "/test", "--checkpoint", run + "/best.r4dc", "--threads", "1",
                     "--per-pair", "--out", (dir / "report.txt").string()});
    rc |= quiet_cli({"infer", "--checkpoint", run + "/best.r4dc", "--record", list_split(data + "/test").front(),
                     "--out", (dir / "pred.r4di").string()});
    return rc;
  };
  const int rc = pipeline("a") | pipeline("b");
  std::size_t files = 0, identical = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    identical += slurp(e.path()) == slurp(root / "b" / fs::relative(e.path(), root / "a"));
  }
  fs::remove_all(root);
  return {rc == 0 && files > 0 && identical == files,
          fmt("exit codes %d, %zu of %zu files byte-identical (dataset, checkpoints, log, report, prediction)", rc,
              identical, files)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool e2e_only = false, skip_e2e = false;
  std::size_t seeds = 5, epochs = 20;
  app.add_flag("--e2e-only", e2e_only, "Run only the end-to-end ordering study");
  app.add_flag("--skip-e2e", skip_e2e, "Skip the end-to-end ordering study");
  app.add_option("--seeds", seeds, "Seeds for the end-to-end study");
  app.add_option("--epochs", epochs, "Training epochs for the end-to-end study");
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto check = [&](const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    const Outcome o = fn();
    failures += !o.pass;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };

  if (!e2e_only) {
    check("geometry-oracles", geometry_oracles);
    check("resolution-math", resolution_math);
    check("gradient-suite", [] {
      const auto t0 = Clock::now();
      Outcome o = run_cases(
          "every operator matches central differences,three-layer MLP loss matches central differences,"
          "loss gradients match central differences,cost volume,end-to-end graph matches central differences,"
          "refine is differentiable with respect to the coarse flow");
      const double secs = seconds_since(t0);
      o.pass = o.pass && secs < 120.0;
      o.detail += fmt(", %.1f s", secs);
      return o;
    });
    check("analytic-zeros", analytic_zeros);
    check("static-mask-fidelity", mask_fidelity);
    check("metric-oracles", [] {
      return run_cases(
          "end point error,resolution-normalized EPE,accuracy scores on hand cases,"
          "relaxed score dominates and scores are monotone,class-split report,segmentation scores");
    });
    check("determinism", determinism);
  }
  if (!skip_e2e) check("end-to-end-ordering", [&] { return end_to_end(seeds, epochs); });
  return failures == 0 ? 0 : 1;
}
