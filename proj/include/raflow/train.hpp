#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "raflow/dataset.hpp"
#include "raflow/losses.hpp"
#include "raflow/metrics.hpp"
#include "raflow/pipeline.hpp"
#include "raflow/rng.hpp"
#include "raflow/rofe.hpp"

namespace raflow {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  double lr_decay = 0.9;
  std::size_t batch_size = 1;
  std::size_t sample_points = 256;
  std::uint64_t seed = 0;
  bool augment = true;
  double augment_yaw = deg_to_rad(10.0);  // ± rad
  double augment_shift = 1.0;             // ± m per axis
  LossConfig loss;
  bool use_sfr = true;
  std::size_t threads = 1;  // validation workers
};

/// Throws ConfigInvalid.
void validate_train_config(const TrainConfig& cfg);

/// Learning rate in effect after `completed_epochs` decays.
double learning_rate(const TrainConfig& cfg, std::size_t completed_epochs);

class Adam {
 public:
  explicit Adam(const RofeModel& model, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update from the accumulated gradients multiplied by grad_scale.
  void step(RofeModel& model, double lr, double grad_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Uniform choice of min(n, frame size) points without replacement, kept in
/// ascending index order; labels follow the source.
PairRecord downsample(const PairRecord& record, std::size_t n, CounterRng& rng);

/// The same random yaw about z and translation applied to both frames; the
/// flow labels rotate with the scene, RRV is left unchanged.
PairRecord augment(const PairRecord& record, std::uint64_t seed, double max_yaw, double max_shift);

/// Forward, loss on the final flow, backward, then one Adam update with
/// gradients averaged over the batch. Returns the mean loss terms.
LossBreakdown train_step(RofeModel& model, Adam& adam, const std::vector<PairRecord>& batch, double lr,
                         const TrainConfig& cfg);

/// Full-resolution forward pass and metrics over a set of pairs; pairs are
/// spread over `threads` workers and pooled in input order.
EvalReport evaluate(const RofeModel& model, const std::vector<PairRecord>& records, const ForwardOptions& opts,
                    const MetricConfig& metrics = {}, std::size_t threads = 1);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown train;
  EvalReport val;
};

std::string format_epoch_log(const EpochLog& e);

struct TrainResult {
  RofeModel best;
  std::size_t best_epoch = 0;
  double best_val_rne = 0.0;
  std::vector<EpochLog> epochs;
};

/// Trains in place; `model` ends at the final epoch, the result holds the best
/// validation-RNE copy. When out_dir is non-empty, every epoch appends a line
/// to train_log.txt and rewrites last.r4dc and (when improved) best.r4dc.
TrainResult train(RofeModel& model, const std::vector<PairRecord>& train_set, const std::vector<PairRecord>& val_set,
                  const TrainConfig& cfg, const std::string& out_dir = "");

/// Reads every record listed by a split manifest.
std::vector<PairRecord> load_split(const std::string& split_dir);

/// Parameter values in parameters() order.
std::vector<std::vector<double>> snapshot(const RofeModel& model);
void restore(RofeModel& model, const std::vector<std::vector<double>>& values);

}  // namespace raflow
