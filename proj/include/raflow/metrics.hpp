#pragma once

#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "raflow/core.hpp"
#include "raflow/geometry.hpp"

namespace raflow {

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

struct MetricConfig {
  SphericalResolution radar_res{0.2, deg_to_rad(1.6), deg_to_rad(1.0)};
  SphericalResolution lidar_res{0.02, deg_to_rad(0.08), deg_to_rad(0.4)};
  double sas_abs = 0.1;
  double sas_rel = 0.10;
  double ras_abs = 0.2;
  double ras_rel = 0.20;
};

/// E_i = ||s_i − s_gt,i||
std::vector<double> epe(const SceneFlow& flow, const SceneFlow& gt);

/// EPE_i / (Δx_i^radar / Δx_i^lidar)
std::vector<double> rne(const Points3& points, const std::vector<double>& epe, const MetricConfig& cfg);
std::vector<double> rne(const RadarFrame& frame, const std::vector<double>& epe, const MetricConfig& cfg);

struct AccuracyScores {
  double sas = 0.0;
  double ras = 0.0;
};

/// Fraction of points with RNE ≤ abs threshold or RNE/||s_gt|| ≤ rel
/// threshold; zero-norm ground truth uses the absolute branch only.
AccuracyScores accuracy_scores(const std::vector<double>& rne, const std::vector<double>& gt_norm,
                               const MetricConfig& cfg);

struct SegmentationScores {
  double accuracy = 0.0;
  std::optional<double> miou;         // mean over classes present in gt or prediction
  std::optional<double> sensitivity;  // moving-class recall; undefined without moving gt
};

SegmentationScores segmentation_scores(const std::vector<bool>& pred_moving, const std::vector<bool>& gt_moving);

struct EvalReport {
  double avg_epe = 0.0;
  double avg_rne = 0.0;
  std::optional<double> stat_rne;
  std::optional<double> mov_rne;
  std::optional<double> fifty_fifty_rne;
  double sas = 0.0;
  double ras = 0.0;
  std::optional<double> seg_accuracy;
  std::optional<double> seg_miou;
  std::optional<double> seg_sensitivity;
};

/// Running per-point sums for a frame pair or a whole split. Ghost points
/// (valid = false) never enter the flow or segmentation statistics.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(MetricConfig cfg = {}) : cfg_(cfg) {}

  void add(const RadarFrame& source, const SceneFlow& flow, const FrameLabels& labels,
           const std::vector<bool>* pred_moving = nullptr);

  EvalReport report() const;
  std::size_t points() const { return n_; }
  const MetricConfig& config() const { return cfg_; }

  /// Per-class means of EPE (diagnostics).
  std::optional<double> stat_epe() const;
  std::optional<double> mov_epe() const;

 private:
  MetricConfig cfg_;
  std::size_t n_ = 0, n_stat_ = 0, n_mov_ = 0, n_sas_ = 0, n_ras_ = 0;
  double epe_sum_ = 0.0, rne_sum_ = 0.0, rne_stat_ = 0.0, rne_mov_ = 0.0, epe_stat_ = 0.0, epe_mov_ = 0.0;
  std::size_t seg_n_ = 0, tp_ = 0, fp_ = 0, fn_ = 0, tn_ = 0;
};

/// Class-split report from per-point values.
EvalReport class_split_report(const std::vector<double>& epe, const std::vector<double>& rne,
                              const std::vector<double>& gt_norm, const std::vector<bool>& gt_moving,
                              const MetricConfig& cfg);

/// Flat "key: value" document, six significant digits, "undefined" for empty classes.
std::string format_report(const EvalReport& report);
EvalReport parse_report(const std::string& text);

}  // namespace raflow
