#include "raflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <Eigen/Geometry>

namespace raflow {

void validate_train_config(const TrainConfig& cfg) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  if (!(cfg.lr > 0.0)) fail("lr must be positive");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
  if (cfg.batch_size == 0) fail("batch_size must be positive");
  if (cfg.sample_points < 3) fail("sample_points must be at least 3");
  if (cfg.augment_yaw < 0.0 || cfg.augment_shift < 0.0) fail("augmentation ranges must be non-negative");
  if (cfg.threads == 0) fail("threads must be positive");
}

double learning_rate(const TrainConfig& cfg, std::size_t completed_epochs) {
  double lr = cfg.lr;
  for (std::size_t e = 0; e < completed_epochs; ++e) lr *= cfg.lr_decay;
  return lr;
}

Adam::Adam(const RofeModel& model, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const NamedTensor& p : model.parameters()) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step(RofeModel& model, double lr, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<NamedTensor> params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Tensor& p = params[k].tensor;
    const std::vector<double> g = p.grad();
    std::span<double> w = p.mutable_data();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * grad_scale;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

namespace {

std::vector<std::size_t> choose(std::size_t total, std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (n >= total) return idx;
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(total - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

PairRecord downsample(const PairRecord& record, std::size_t n, CounterRng& rng) {
  const std::vector<std::size_t> src = choose(record.pair.source.size(), n, rng);
  const std::vector<std::size_t> dst = choose(record.pair.target.size(), n, rng);
  PairRecord out;
  out.pair.dt = record.pair.dt;
  out.pair.source.timestamp = record.pair.source.timestamp;
  out.pair.target.timestamp = record.pair.target.timestamp;
  out.labels.gt_ego = record.labels.gt_ego;
  out.labels.gt_flow.resize(static_cast<Eigen::Index>(src.size()), 3);
  for (std::size_t k = 0; k < src.size(); ++k) {
    out.pair.source.points.push_back(record.pair.source.points[src[k]]);
    out.labels.gt_flow.row(static_cast<Eigen::Index>(k)) = record.labels.gt_flow.row(static_cast<Eigen::Index>(src[k]));
    out.labels.gt_moving.push_back(record.labels.gt_moving[src[k]]);
    out.labels.valid.push_back(record.labels.valid[src[k]]);
  }
  for (std::size_t j : dst) out.pair.target.points.push_back(record.pair.target.points[j]);
  return out;
}

PairRecord augment(const PairRecord& record, std::uint64_t seed, double max_yaw, double max_shift) {
  CounterRng rng(seed);
  RigidTransform a;
  a.rotation = Eigen::AngleAxisd(rng.uniform(-max_yaw, max_yaw), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  for (int c = 0; c < 3; ++c) a.translation(c) = rng.uniform(-max_shift, max_shift);

  PairRecord out = record;
  for (RadarPoint& p : out.pair.source.points) p.position = a.apply(p.position);
  for (RadarPoint& p : out.pair.target.points) p.position = a.apply(p.position);
  out.labels.gt_flow = record.labels.gt_flow * a.rotation.transpose();
  out.labels.gt_ego = a * record.labels.gt_ego * a.inverse();
  return out;
}

LossBreakdown train_step(RofeModel& model, Adam& adam, const std::vector<PairRecord>& batch, double lr,
                         const TrainConfig& cfg) {
  if (batch.empty()) throw Error(ErrorCode::DatasetEmpty, "empty training batch");
  model.zero_grad();
  ForwardOptions opts;
  opts.use_sfr = cfg.use_sfr;
  opts.warn_on_fallback = false;
  LossBreakdown mean;
  for (const PairRecord& rec : batch) {
    const ForwardResult f = forward(model, rec.pair, opts);
    const LossTerms terms = total_loss(rec.pair, f.final_flow, model.hyperparams(), cfg.loss);
    const LossBreakdown b = terms.values();
    if (!std::isfinite(b.total)) {
      char msg[256];
      std::snprintf(msg, sizeof(msg), "non-finite loss at optimizer step %zu (rd=%g sc=%g ss=%g)", adam.steps() + 1,
                    b.rd, b.sc, b.ss);
      throw Error(ErrorCode::DivergedLoss, msg);
    }
    if (terms.total.requires_grad()) terms.total.backward();
    mean.total += b.total;
    mean.rd += b.rd;
    mean.sc += b.sc;
    mean.ss += b.ss;
    mean.discarded_src += b.discarded_src;
    mean.discarded_dst += b.discarded_dst;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  adam.step(model, lr, inv);
  mean.total *= inv;
  mean.rd *= inv;
  mean.sc *= inv;
  mean.ss *= inv;
  return mean;
}

EvalReport evaluate(const RofeModel& model, const std::vector<PairRecord>& records, const ForwardOptions& opts,
                    const MetricConfig& metrics, std::size_t threads) {
  std::vector<Prediction> preds(records.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < records.size(); i += threads) preds[i] = infer(model, records[i].pair, opts);
  };
  threads = std::max<std::size_t>(1, std::min(threads, records.size()));
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (std::thread& t : pool) t.join();
  }
  MetricAccumulator acc(metrics);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::vector<bool> moving = moving_flags(preds[i].static_mask);
    acc.add(records[i].pair.source, preds[i].flow, records[i].labels, opts.use_sfr ? &moving : nullptr);
  }
  return acc.report();
}

std::string format_epoch_log(const EpochLog& e) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "epoch=%zu lr=%.6g loss=%.6g rd=%.6g sc=%.6g ss=%.6g val_epe=%.6g val_rne=%.6g val_sas=%.6g "
                "val_ras=%.6g",
                e.epoch, e.lr, e.train.total, e.train.rd, e.train.sc, e.train.ss, e.val.avg_epe, e.val.avg_rne,
                e.val.sas, e.val.ras);
  return buf;
}

std::vector<std::vector<double>> snapshot(const RofeModel& model) {
  std::vector<std::vector<double>> out;
  for (const NamedTensor& p : model.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(RofeModel& model, const std::vector<std::vector<double>>& values) {
  std::vector<NamedTensor> params = model.parameters();
  if (params.size() != values.size()) throw Error(ErrorCode::ShapeMismatch, "snapshot does not match model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<double> w = params[k].tensor.mutable_data();
    if (w.size() != values[k].size()) throw Error(ErrorCode::ShapeMismatch, "snapshot does not match model");
    std::copy(values[k].begin(), values[k].end(), w.begin());
  }
}

TrainResult train(RofeModel& model, const std::vector<PairRecord>& train_set, const std::vector<PairRecord>& val_set,
                  const TrainConfig& cfg, const std::string& out_dir) {
  validate_train_config(cfg);
  if (train_set.empty()) throw Error(ErrorCode::DatasetEmpty, "training split is empty");
  if (val_set.empty()) throw Error(ErrorCode::DatasetEmpty, "validation split is empty");

  namespace fs = std::filesystem;
  std::ofstream log;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    log.open(fs::path(out_dir) / "train_log.txt", std::ios::binary | std::ios::trunc);
    if (!log) throw Error(ErrorCode::IoError, "cannot write the training log in '" + out_dir + "'");
  }

  Adam adam(model);
  ForwardOptions eval_opts;
  eval_opts.use_sfr = cfg.use_sfr;
  eval_opts.warn_on_fallback = false;

  TrainResult result{RofeModel::create(model.hyperparams(), 0, model.channels()), 0, 0.0, {}};
  std::vector<std::vector<double>> best;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng rng(cfg.seed, 0x7261666CULL + epoch);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    const double lr = learning_rate(cfg, epoch);
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.lr = lr;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<PairRecord> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        PairRecord rec = downsample(train_set[order[k]], cfg.sample_points, rng);
        if (cfg.augment) rec = augment(rec, rng.next(), cfg.augment_yaw, cfg.augment_shift);
        batch.push_back(std::move(rec));
      }
      const LossBreakdown b = train_step(model, adam, batch, lr, cfg);
      entry.train.total += b.total;
      entry.train.rd += b.rd;
      entry.train.sc += b.sc;
      entry.train.ss += b.ss;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    entry.train.total *= inv;
    entry.train.rd *= inv;
    entry.train.sc *= inv;
    entry.train.ss *= inv;

    entry.val = evaluate(model, val_set, eval_opts, MetricConfig{}, cfg.threads);
    const bool improved = best.empty() || entry.val.avg_rne < result.best_val_rne;
    if (improved) {
      best = snapshot(model);
      result.best_epoch = entry.epoch;
      result.best_val_rne = entry.val.avg_rne;
    }
    result.epochs.push_back(entry);

    if (!out_dir.empty()) {
      log << format_epoch_log(entry) << '\n';
      log.flush();
      save_checkpoint(model, (fs::path(out_dir) / "last.r4dc").string());
      if (improved) save_checkpoint(model, (fs::path(out_dir) / "best.r4dc").string());
    }
  }
  restore(result.best, best.empty() ? snapshot(model) : best);
  return result;
}

std::vector<PairRecord> load_split(const std::string& split_dir) {
  std::vector<PairRecord> out;
  for (const std::string& path : list_split(split_dir)) out.push_back(read_record(path));
  return out;
}

}  // namespace raflow
