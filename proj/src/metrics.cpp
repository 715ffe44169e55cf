#include "raflow/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace raflow {

std::vector<double> epe(const SceneFlow& flow, const SceneFlow& gt) {
  if (flow.rows() != gt.rows()) throw Error(ErrorCode::LengthMismatch, "prediction and gt differ in length");
  std::vector<double> out(flow.rows());
  for (Eigen::Index i = 0; i < flow.rows(); ++i) out[i] = (flow.row(i) - gt.row(i)).norm();
  return out;
}

std::vector<double> rne(const Points3& points, const std::vector<double>& epe, const MetricConfig& cfg) {
  if (static_cast<std::size_t>(points.rows()) != epe.size()) {
    throw Error(ErrorCode::LengthMismatch, "EPE length differs from point count");
  }
  std::vector<double> out(epe.size());
  for (std::size_t i = 0; i < epe.size(); ++i) {
    const Eigen::Vector3d p = points.row(i).transpose();
    const double ratio = point_resolution(p, cfg.radar_res) / point_resolution(p, cfg.lidar_res);
    out[i] = epe[i] / ratio;
  }
  return out;
}

std::vector<double> rne(const RadarFrame& frame, const std::vector<double>& epe, const MetricConfig& cfg) {
  return rne(positions(frame), epe, cfg);
}

namespace {

bool passes(double rne, double gt_norm, double abs_th, double rel_th) {
  if (rne <= abs_th) return true;
  return gt_norm > 0.0 && rne / gt_norm <= rel_th;
}

}  // namespace

AccuracyScores accuracy_scores(const std::vector<double>& rne, const std::vector<double>& gt_norm,
                               const MetricConfig& cfg) {
  if (rne.size() != gt_norm.size()) throw Error(ErrorCode::LengthMismatch, "RNE and gt norms differ in length");
  if (rne.empty()) return {};
  std::size_t strict = 0, relaxed = 0;
  for (std::size_t i = 0; i < rne.size(); ++i) {
    strict += passes(rne[i], gt_norm[i], cfg.sas_abs, cfg.sas_rel);
    relaxed += passes(rne[i], gt_norm[i], cfg.ras_abs, cfg.ras_rel);
  }
  const double n = static_cast<double>(rne.size());
  return {static_cast<double>(strict) / n, static_cast<double>(relaxed) / n};
}

namespace {

SegmentationScores scores_from_confusion(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  SegmentationScores s;
  const std::size_t total = tp + fp + fn + tn;
  if (total == 0) return s;
  s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  double iou_sum = 0.0;
  int classes = 0;
  if (tp + fp + fn > 0) {
    iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++classes;
  }
  if (tn + fp + fn > 0) {
    iou_sum += static_cast<double>(tn) / static_cast<double>(tn + fp + fn);
    ++classes;
  }
  if (classes > 0) s.miou = iou_sum / classes;
  if (tp + fn > 0) s.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return s;
}

}  // namespace

SegmentationScores segmentation_scores(const std::vector<bool>& pred_moving, const std::vector<bool>& gt_moving) {
  if (pred_moving.size() != gt_moving.size()) throw Error(ErrorCode::LengthMismatch, "segmentation label lengths differ");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < gt_moving.size(); ++i) {
    if (pred_moving[i] && gt_moving[i]) ++tp;
    else if (pred_moving[i]) ++fp;
    else if (gt_moving[i]) ++fn;
    else ++tn;
  }
  return scores_from_confusion(tp, fp, fn, tn);
}

void MetricAccumulator::add(const RadarFrame& source, const SceneFlow& flow, const FrameLabels& labels,
                            const std::vector<bool>* pred_moving) {
  const std::size_t n = source.size();
  if (static_cast<std::size_t>(flow.rows()) != n || static_cast<std::size_t>(labels.gt_flow.rows()) != n ||
      labels.gt_moving.size() != n || (pred_moving && pred_moving->size() != n)) {
    throw Error(ErrorCode::LengthMismatch, "evaluation inputs disagree with source size");
  }
  const std::vector<double> e = epe(flow, labels.gt_flow);
  const std::vector<double> r = rne(source, e, cfg_);
  for (std::size_t i = 0; i < n; ++i) {
    if (!labels.valid.empty() && !labels.valid[i]) continue;
    const double gt_norm = labels.gt_flow.row(i).norm();
    ++n_;
    epe_sum_ += e[i];
    rne_sum_ += r[i];
    n_sas_ += passes(r[i], gt_norm, cfg_.sas_abs, cfg_.sas_rel);
    n_ras_ += passes(r[i], gt_norm, cfg_.ras_abs, cfg_.ras_rel);
    if (labels.gt_moving[i]) {
      ++n_mov_;
      rne_mov_ += r[i];
      epe_mov_ += e[i];
    } else {
      ++n_stat_;
      rne_stat_ += r[i];
      epe_stat_ += e[i];
    }
    if (pred_moving) {
      ++seg_n_;
      const bool p = (*pred_moving)[i], g = labels.gt_moving[i];
      if (p && g) ++tp_;
      else if (p) ++fp_;
      else if (g) ++fn_;
      else ++tn_;
    }
  }
}

EvalReport MetricAccumulator::report() const {
  EvalReport rep;
  if (n_ > 0) {
    const double n = static_cast<double>(n_);
    rep.avg_epe = epe_sum_ / n;
    rep.avg_rne = rne_sum_ / n;
    rep.sas = static_cast<double>(n_sas_) / n;
    rep.ras = static_cast<double>(n_ras_) / n;
  }
  if (n_stat_ > 0) rep.stat_rne = rne_stat_ / static_cast<double>(n_stat_);
  if (n_mov_ > 0) rep.mov_rne = rne_mov_ / static_cast<double>(n_mov_);
  if (rep.stat_rne && rep.mov_rne) rep.fifty_fifty_rne = (*rep.stat_rne + *rep.mov_rne) / 2.0;
  if (seg_n_ > 0) {
    const SegmentationScores s = scores_from_confusion(tp_, fp_, fn_, tn_);
    rep.seg_accuracy = s.accuracy;
    rep.seg_miou = s.miou;
    rep.seg_sensitivity = s.sensitivity;
  }
  return rep;
}

std::optional<double> MetricAccumulator::stat_epe() const {
  if (n_stat_ == 0) return std::nullopt;
  return epe_stat_ / static_cast<double>(n_stat_);
}

std::optional<double> MetricAccumulator::mov_epe() const {
  if (n_mov_ == 0) return std::nullopt;
  return epe_mov_ / static_cast<double>(n_mov_);
}

EvalReport class_split_report(const std::vector<double>& epe, const std::vector<double>& rne,
                              const std::vector<double>& gt_norm, const std::vector<bool>& gt_moving,
                              const MetricConfig& cfg) {
  const std::size_t n = epe.size();
  if (rne.size() != n || gt_norm.size() != n || gt_moving.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "class split inputs differ in length");
  }
  EvalReport rep;
  if (n == 0) return rep;
  double e_sum = 0.0, r_sum = 0.0, stat = 0.0, mov = 0.0;
  std::size_t n_stat = 0, n_mov = 0;
  for (std::size_t i = 0; i < n; ++i) {
    e_sum += epe[i];
    r_sum += rne[i];
    if (gt_moving[i]) {
      mov += rne[i];
      ++n_mov;
    } else {
      stat += rne[i];
      ++n_stat;
    }
  }
  rep.avg_epe = e_sum / static_cast<double>(n);
  rep.avg_rne = r_sum / static_cast<double>(n);
  if (n_stat) rep.stat_rne = stat / static_cast<double>(n_stat);
  if (n_mov) rep.mov_rne = mov / static_cast<double>(n_mov);
  if (rep.stat_rne && rep.mov_rne) rep.fifty_fifty_rne = (*rep.stat_rne + *rep.mov_rne) / 2.0;
  const AccuracyScores acc = accuracy_scores(rne, gt_norm, cfg);
  rep.sas = acc.sas;
  rep.ras = acc.ras;
  return rep;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "undefined"; }

}  // namespace

std::string format_report(const EvalReport& r) {
  std::string s;
  s += "avg_epe: " + fmt(r.avg_epe) + "\n";
  s += "avg_rne: " + fmt(r.avg_rne) + "\n";
  s += "stat_rne: " + fmt(r.stat_rne) + "\n";
  s += "mov_rne: " + fmt(r.mov_rne) + "\n";
  s += "fifty_fifty_rne: " + fmt(r.fifty_fifty_rne) + "\n";
  s += "sas: " + fmt(r.sas) + "\n";
  s += "ras: " + fmt(r.ras) + "\n";
  s += "seg_accuracy: " + fmt(r.seg_accuracy) + "\n";
  s += "seg_miou: " + fmt(r.seg_miou) + "\n";
  s += "seg_sensitivity: " + fmt(r.seg_sensitivity) + "\n";
  return s;
}

EvalReport parse_report(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    const std::string val = line.substr(colon + 2);
    std::optional<double> v;
    if (val != "undefined") v = std::stod(val);
    if (key == "avg_epe") r.avg_epe = v.value_or(0.0);
    else if (key == "avg_rne") r.avg_rne = v.value_or(0.0);
    else if (key == "stat_rne") r.stat_rne = v;
    else if (key == "mov_rne") r.mov_rne = v;
    else if (key == "fifty_fifty_rne") r.fifty_fifty_rne = v;
    else if (key == "sas") r.sas = v.value_or(0.0);
    else if (key == "ras") r.ras = v.value_or(0.0);
    else if (key == "seg_accuracy") r.seg_accuracy = v;
    else if (key == "seg_miou") r.seg_miou = v;
    else if (key == "seg_sensitivity") r.seg_sensitivity = v;
    else throw Error(ErrorCode::ConfigInvalid, "unknown report key '" + key + "'");
  }
  return r;
}

}  // namespace raflow
