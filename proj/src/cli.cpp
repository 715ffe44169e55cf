#include "raflow/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "raflow/baselines.hpp"
#include "raflow/dataset.hpp"
#include "raflow/metrics.hpp"
#include "raflow/pipeline.hpp"
#include "raflow/synth.hpp"
#include "raflow/train.hpp"

namespace raflow {
namespace {

namespace fs = std::filesystem;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid: return 2;
    case ErrorCode::IoError:
    case ErrorCode::DatasetEmpty: return 3;
    case ErrorCode::DivergedLoss:
    case ErrorCode::NonFinite: return 4;
    default: return 1;
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::IoError, std::string(what) + " '" + path + "' not found");
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::size_t pairs = 0;
  std::string out;
  SceneConfig scene;
  std::vector<double> ratios = {0.6, 0.2, 0.2};
  double fov_azimuth_deg = 60.0;
  double fov_elevation_deg = 10.0;
};

void add_generate(CLI::App& app, GenerateArgs& a, std::function<void()>& action) {
  CLI::App* cmd = app.add_subcommand("generate", "Write a synthetic radar scene-flow dataset");
  cmd->add_option("--pairs", a.pairs, "Number of frame pairs")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--seed", a.scene.seed, "Generator seed");
  cmd->add_option("--ratios", a.ratios, "Train/val/test split ratios")->expected(3);
  cmd->add_option("--n-static", a.scene.n_static, "Static points per frame");
  cmd->add_option("--n-movers", a.scene.n_movers, "Moving objects per scene");
  cmd->add_option("--points-per-mover", a.scene.points_per_mover, "Points per moving object");
  cmd->add_option("--ego-speed", a.scene.ego_speed.lo, "Minimum ego speed (m/s)");
  cmd->add_option("--ego-speed-max", a.scene.ego_speed.hi, "Maximum ego speed (m/s)");
  cmd->add_option("--ego-acceleration", a.scene.ego_acceleration, "Ego acceleration (m/s^2)");
  cmd->add_option("--dt", a.scene.dt, "Frame interval (s)");
  cmd->add_option("--position-noise", a.scene.position_noise, "Position noise sigma (m)");
  cmd->add_option("--rrv-noise", a.scene.rrv_noise, "RRV noise sigma (m/s)");
  cmd->add_option("--outlier-fraction", a.scene.outlier_fraction, "Share of ghost points per frame");
  cmd->add_option("--max-range", a.scene.max_range, "Maximum range (m)");
  cmd->add_option("--fov-azimuth", a.fov_azimuth_deg, "Azimuth half-angle (deg)");
  cmd->add_option("--fov-elevation", a.fov_elevation_deg, "Elevation half-angle (deg)");
  cmd->callback([&] {
    action = [&] {
      a.scene.fov_azimuth = deg_to_rad(a.fov_azimuth_deg);
      a.scene.fov_elevation = deg_to_rad(a.fov_elevation_deg);
      const DatasetSummary s =
          generate_dataset(a.scene, a.pairs, SplitRatios{a.ratios[0], a.ratios[1], a.ratios[2]}, a.out);
      std::cout << s.manifest_path << '\n';
    };
  });
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  TrainConfig train;
  HyperParams hp;
  std::vector<std::string> disable_loss;
  std::vector<std::string> disable_feature;
  bool no_augment = false;
  std::uint64_t init_seed = 0;
  CLI::App* cmd = nullptr;
};

bool given(const CLI::App* cmd, const char* name) { return cmd->count(name) > 0; }

void apply_config_file(TrainArgs& a) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(a.config));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
  nlohmann::json hp_part = nlohmann::json::object();
  TrainConfig& t = a.train;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") t.epochs = value.get<std::size_t>();
      else if (key == "lr") t.lr = value.get<double>();
      else if (key == "lr_decay") t.lr_decay = value.get<double>();
      else if (key == "batch_size") t.batch_size = value.get<std::size_t>();
      else if (key == "sample_points") t.sample_points = value.get<std::size_t>();
      else if (key == "seed") t.seed = value.get<std::uint64_t>();
      else if (key == "augment") t.augment = value.get<bool>();
      else if (key == "augment_yaw") t.augment_yaw = deg_to_rad(value.get<double>());
      else if (key == "augment_shift") t.augment_shift = value.get<double>();
      else if (key == "hard_chamfer") t.loss.hard_chamfer = value.get<bool>();
      else if (key == "uniform_smoothness") t.loss.uniform_smoothness = value.get<bool>();
      else if (key == "mean_reduction") t.loss.mean_reduction = value.get<bool>();
      else if (key == "use_sfr") t.use_sfr = value.get<bool>();
      else if (key == "threads") t.threads = value.get<std::size_t>();
      else if (key == "disable_loss") a.disable_loss = value.get<std::vector<std::string>>();
      else if (key == "disable_feature") a.disable_feature = value.get<std::vector<std::string>>();
      else hp_part[key] = value;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }
  a.hp = hyperparams_from_json(hp_part.dump());
}

void add_train(CLI::App& app, TrainArgs& a, std::function<void()>& action) {
  CLI::App* cmd = app.add_subcommand("train", "Self-supervised training");
  a.cmd = cmd;
  cmd->add_option("--data", a.data, "Dataset directory with train/ and val/ splits")->required();
  cmd->add_option("--out", a.out, "Output directory for checkpoints and the log")->required();
  cmd->add_option("--config", a.config, "Flat JSON file of hyperparameters and training settings");
  cmd->add_option("--epochs", a.train.epochs, "Training epochs");
  cmd->add_option("--lr", a.train.lr, "Initial learning rate");
  cmd->add_option("--lr-decay", a.train.lr_decay, "Per-epoch learning-rate factor");
  cmd->add_option("--batch-size", a.train.batch_size, "Pairs per optimizer step");
  cmd->add_option("--sample-points", a.train.sample_points, "Points kept per frame during training");
  cmd->add_option("--seed", a.train.seed, "Sampling and augmentation seed");
  cmd->add_option("--init-seed", a.init_seed, "Weight initialization seed");
  cmd->add_flag("--no-augment", a.no_augment, "Disable augmentation");
  cmd->add_option("--threads", a.train.threads, "Worker threads for validation");
  cmd->add_option("--n-scales", a.hp.n_scales, "Encoder/decoder scales");
  cmd->add_option("--c-local", a.hp.c_local, "Set-conv output width");
  cmd->add_option("--c-cor", a.hp.c_cor, "Cost-volume width");
  cmd->add_option("--radii", a.hp.radii, "Set-conv radii (m)");
  cmd->add_option("--zeta", a.hp.zeta, "Static-mask residual threshold");
  cmd->add_option("--delta", a.hp.delta, "Chamfer density gate");
  cmd->add_option("--epsilon", a.hp.epsilon, "Chamfer hinge tolerance (m^2)");
  cmd->add_option("--alpha", a.hp.alpha, "Smoothness kernel width");
  cmd->add_option("--n-neighbors", a.hp.n_neighbors, "Smoothness neighbors");
  cmd->add_option("--disable-loss", a.disable_loss, "Drop a loss term")
      ->check(CLI::IsMember({"rd", "sc", "ss"}))
      ->take_all();
  cmd->add_option("--disable-feature", a.disable_feature, "Zero an input channel")
      ->check(CLI::IsMember({"rrv", "rcs", "power"}))
      ->take_all();
  cmd->add_flag("--hard-chamfer", a.train.loss.hard_chamfer, "Plain Chamfer loss");
  cmd->add_flag("--uniform-smoothness", a.train.loss.uniform_smoothness, "Uniform smoothness weights");
  cmd->add_flag("--mean-reduction", a.train.loss.mean_reduction, "Average loss terms over points");
  cmd->callback([&] {
    action = [&] {
      if (!a.config.empty()) {
        // Flags win over the file: re-apply everything given on the command line.
        const TrainArgs flags = a;
        apply_config_file(a);
        const TrainConfig& ft = flags.train;
        TrainConfig& t = a.train;
        if (given(a.cmd, "--epochs")) t.epochs = ft.epochs;
        if (given(a.cmd, "--lr")) t.lr = ft.lr;
        if (given(a.cmd, "--lr-decay")) t.lr_decay = ft.lr_decay;
        if (given(a.cmd, "--batch-size")) t.batch_size = ft.batch_size;
        if (given(a.cmd, "--sample-points")) t.sample_points = ft.sample_points;
        if (given(a.cmd, "--seed")) t.seed = ft.seed;
        if (given(a.cmd, "--threads")) t.threads = ft.threads;
        if (given(a.cmd, "--hard-chamfer")) t.loss.hard_chamfer = true;
        if (given(a.cmd, "--uniform-smoothness")) t.loss.uniform_smoothness = true;
        if (given(a.cmd, "--mean-reduction")) t.loss.mean_reduction = true;
        if (given(a.cmd, "--n-scales")) a.hp.n_scales = flags.hp.n_scales;
        if (given(a.cmd, "--c-local")) a.hp.c_local = flags.hp.c_local;
        if (given(a.cmd, "--c-cor")) a.hp.c_cor = flags.hp.c_cor;
        if (given(a.cmd, "--radii")) a.hp.radii = flags.hp.radii;
        if (given(a.cmd, "--zeta")) a.hp.zeta = flags.hp.zeta;
        if (given(a.cmd, "--delta")) a.hp.delta = flags.hp.delta;
        if (given(a.cmd, "--epsilon")) a.hp.epsilon = flags.hp.epsilon;
        if (given(a.cmd, "--alpha")) a.hp.alpha = flags.hp.alpha;
        if (given(a.cmd, "--n-neighbors")) a.hp.n_neighbors = flags.hp.n_neighbors;
        if (given(a.cmd, "--disable-loss")) a.disable_loss = flags.disable_loss;
        if (given(a.cmd, "--disable-feature")) a.disable_feature = flags.disable_feature;
      }
      if (a.no_augment) a.train.augment = false;
      for (const std::string& l : a.disable_loss) {
        if (l == "rd") a.train.loss.use_rd = false;
        else if (l == "sc") a.train.loss.use_sc = false;
        else if (l == "ss") a.train.loss.use_ss = false;
        else throw Error(ErrorCode::ConfigInvalid, "unknown loss '" + l + "'");
      }
      InputChannels channels;
      for (const std::string& f : a.disable_feature) {
        if (f == "rrv") channels.rrv = false;
        else if (f == "rcs") channels.rcs = false;
        else if (f == "power") channels.power = false;
        else throw Error(ErrorCode::ConfigInvalid, "unknown feature '" + f + "'");
      }
      validate_hyperparams(a.hp);
      validate_train_config(a.train);

      const std::vector<PairRecord> train_set = load_split((fs::path(a.data) / "train").string());
      const std::vector<PairRecord> val_set = load_split((fs::path(a.data) / "val").string());
      RofeModel model = RofeModel::create(a.hp, a.init_seed, channels);
      const TrainResult r = train(model, train_set, val_set, a.train, a.out);
      std::cout << "best_epoch: " << r.best_epoch << "\nbest_val_rne: " << r.best_val_rne << "\ncheckpoint: "
                << (fs::path(a.out) / "best.r4dc").string() << '\n';
    };
  });
}

// ---------------------------------------------------------------- eval / baseline

std::string pair_document(const std::string& name, const EvalReport& r) {
  return "[" + name + "]\n" + format_report(r);
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string predictions;
  std::string out;
  bool oracle_gt = false;
  bool no_sfr = false;
  bool per_pair = false;
  double zeta = 0.0;
  std::size_t threads = 1;
  CLI::App* cmd = nullptr;
};

void emit(const std::string& document, const std::string& out) {
  std::cout << document;
  if (!out.empty()) write_text(out, document);
}

std::string prediction_path(const std::string& dir, const std::string& record) {
  return (fs::path(dir) / fs::path(record).filename().replace_extension(".r4di")).string();
}

void add_eval(CLI::App& app, EvalArgs& a, std::function<void()>& action) {
  CLI::App* cmd = app.add_subcommand("eval", "Evaluate on a split at full resolution");
  a.cmd = cmd;
  cmd->add_option("--data", a.data, "Split directory (containing manifest.txt)")->required();
  cmd->add_option("--checkpoint", a.checkpoint, "Model checkpoint");
  cmd->add_option("--predictions", a.predictions, "Directory of .r4di files to score instead of running a model");
  cmd->add_flag("--oracle-gt", a.oracle_gt, "Score the ground truth itself");
  cmd->add_flag("--no-sfr", a.no_sfr, "Use the coarse network flow");
  cmd->add_option("--zeta", a.zeta, "Override the checkpoint's static-mask threshold");
  cmd->add_flag("--per-pair", a.per_pair, "Append one report per pair");
  cmd->add_option("--out", a.out, "Also write the report to this file");
  cmd->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->callback([&] {
    action = [&] {
      const int sources = (a.oracle_gt ? 1 : 0) + (a.predictions.empty() ? 0 : 1) + (a.checkpoint.empty() ? 0 : 1);
      if (sources != 1) {
        throw Error(ErrorCode::ConfigInvalid, "give exactly one of --checkpoint, --predictions, --oracle-gt");
      }
      std::optional<RofeModel> model;
      if (!a.checkpoint.empty()) {
        require_file(a.checkpoint, "checkpoint");
        model = load_checkpoint(a.checkpoint);
      }
      const std::vector<std::string> paths = list_split(a.data);
      ForwardOptions opts;
      opts.use_sfr = !a.no_sfr;
      if (given(a.cmd, "--zeta")) {
        opts.override_zeta = true;
        opts.thresholds.zeta = a.zeta;
      }

      std::vector<PairRecord> records;
      for (const std::string& p : paths) records.push_back(read_record(p));
      std::vector<Prediction> preds(records.size());
      if (model) {
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(a.threads, records.size());
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (std::size_t i = w; i < records.size(); i += workers) preds[i] = infer(*model, records[i].pair, opts);
          });
        }
        for (std::thread& t : pool) t.join();
      } else {
        for (std::size_t i = 0; i < records.size(); ++i) {
          if (a.oracle_gt) {
            preds[i].flow = records[i].labels.gt_flow;
            preds[i].static_mask = moving_flags(records[i].labels.gt_moving);
            preds[i].ego_motion = records[i].labels.gt_ego;
          } else {
            preds[i] = read_prediction(prediction_path(a.predictions, paths[i]));
            if (static_cast<std::size_t>(preds[i].flow.rows()) != records[i].pair.source.size()) {
              throw Error(ErrorCode::IoError, "prediction size differs for " + paths[i]);
            }
          }
        }
      }

      const bool with_mask = a.oracle_gt || !a.predictions.empty() || opts.use_sfr;
      MetricAccumulator total;
      std::string per_pair;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const std::vector<bool> moving = moving_flags(preds[i].static_mask);
        const std::vector<bool>* seg = with_mask ? &moving : nullptr;
        total.add(records[i].pair.source, preds[i].flow, records[i].labels, seg);
        if (a.per_pair) {
          MetricAccumulator one;
          one.add(records[i].pair.source, preds[i].flow, records[i].labels, seg);
          per_pair += "\n" + pair_document(fs::path(paths[i]).filename().string(), one.report());
        }
      }
      emit(format_report(total.report()) + per_pair, a.out);
    };
  });
}

struct BaselineArgs {
  std::string method = "icp";
  std::string data;
  std::string out;
  std::string predictions;
  std::size_t max_iters = 50;
  double tol = 1e-6;
  bool per_pair = false;
};

void add_baseline(CLI::App& app, BaselineArgs& a, std::function<void()>& action) {
  CLI::App* cmd = app.add_subcommand("baseline", "Score a non-learned reference on a split");
  cmd->add_option("--method", a.method, "icp or rigid")->check(CLI::IsMember({"icp", "rigid"}));
  cmd->add_option("--data", a.data, "Split directory (containing manifest.txt)")->required();
  cmd->add_option("--max-iters", a.max_iters, "ICP iteration cap");
  cmd->add_option("--tol", a.tol, "ICP mean-shift tolerance (m)");
  cmd->add_option("--predictions", a.predictions, "Write .r4di predictions into this directory");
  cmd->add_flag("--per-pair", a.per_pair, "Append one report per pair");
  cmd->add_option("--out", a.out, "Also write the report to this file");
  cmd->callback([&] {
    action = [&] {
      const std::vector<std::string> paths = list_split(a.data);
      if (!a.predictions.empty()) fs::create_directories(a.predictions);
      MetricAccumulator total;
      std::string per_pair;
      for (const std::string& path : paths) {
        const PairRecord rec = read_record(path);
        const IcpResult r = icp(rec.pair, a.method == "rigid" ? 1 : a.max_iters, a.tol);
        total.add(rec.pair.source, r.flow, rec.labels);
        if (a.per_pair) {
          MetricAccumulator one;
          one.add(rec.pair.source, r.flow, rec.labels);
          per_pair += "\n" + pair_document(fs::path(path).filename().string(), one.report());
        }
        if (!a.predictions.empty()) {
          Prediction p;
          p.flow = r.flow;
          p.static_mask.assign(rec.pair.source.size(), true);
          p.ego_motion = r.transform;
          write_prediction(prediction_path(a.predictions, path), p);
        }
      }
      emit(format_report(total.report()) + per_pair, a.out);
    };
  });
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string checkpoint;
  std::string record;
  std::string out;
  bool no_sfr = false;
};

void add_infer(CLI::App& app, InferArgs& a, std::function<void()>& action) {
  CLI::App* cmd = app.add_subcommand("infer", "Predict flow, static mask and ego-motion for one record");
  cmd->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
  cmd->add_option("--record", a.record, "Pair record (.r4df)")->required();
  cmd->add_option("--out", a.out, "Output file (.r4di)")->required();
  cmd->add_flag("--no-sfr", a.no_sfr, "Skip static flow refinement");
  cmd->callback([&] {
    action = [&] {
      require_file(a.checkpoint, "checkpoint");
      const RofeModel model = load_checkpoint(a.checkpoint);
      const PairRecord rec = read_record(a.record);
      ForwardOptions opts;
      opts.use_sfr = !a.no_sfr;
      write_prediction(a.out, infer(model, rec.pair, opts));
      std::cout << a.out << '\n';
    };
  });
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Self-supervised 4-D radar scene flow"};
  app.require_subcommand(1);
  std::function<void()> action;
  GenerateArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  InferArgs inf;
  BaselineArgs base;
  add_generate(app, gen, action);
  add_train(app, tr, action);
  add_eval(app, ev, action);
  add_infer(app, inf, action);
  add_baseline(app, base, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace raflow
