#include "raflow/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace raflow {
namespace {

constexpr std::uint32_t kRecordVersion = 1;
constexpr std::uint32_t kPredictionVersion = 1;

void put_frame(detail::BinaryWriter& w, const RadarFrame& f) {
  for (const RadarPoint& p : f.points) {
    for (int c = 0; c < 3; ++c) w.f64(p.position(c));
    w.f64(p.rrv);
    w.f64(p.rcs);
    w.f64(p.power);
  }
}

RadarFrame get_frame(detail::BinaryReader& r, std::size_t n, double timestamp) {
  RadarFrame f;
  f.timestamp = timestamp;
  f.points.resize(n);
  for (RadarPoint& p : f.points) {
    for (int c = 0; c < 3; ++c) p.position(c) = r.f64();
    p.rrv = r.f64();
    p.rcs = r.f64();
    p.power = r.f64();
  }
  return f;
}

void put_transform(detail::BinaryWriter& w, const RigidTransform& t) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) w.f64(t.rotation(i, j));
    w.f64(t.translation(i));
  }
}

RigidTransform get_transform(detail::BinaryReader& r) {
  RigidTransform t;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) t.rotation(i, j) = r.f64();
    t.translation(i) = r.f64();
  }
  return t;
}

void check_magic(detail::BinaryReader& r, const char* magic, std::uint32_t version) {
  if (r.bytes(4) != magic) throw Error(ErrorCode::IoError, "'" + r.path() + "' is not a " + magic + " file");
  if (r.u32() != version) throw Error(ErrorCode::IoError, "'" + r.path() + "' has an unsupported version");
}

void check_end(const detail::BinaryReader& r) {
  if (!r.at_end()) throw Error(ErrorCode::IoError, "'" + r.path() + "' has trailing bytes");
}

}  // namespace

void write_record(const std::string& path, const FramePair& pair, const FrameLabels& labels) {
  const std::size_t n1 = pair.source.size();
  if (static_cast<std::size_t>(labels.gt_flow.rows()) != n1 || labels.gt_moving.size() != n1 ||
      labels.valid.size() != n1) {
    throw Error(ErrorCode::LengthMismatch, "labels do not match the source frame");
  }
  detail::BinaryWriter w;
  w.bytes("R4DF");
  w.u32(kRecordVersion);
  w.u32(static_cast<std::uint32_t>(n1));
  w.u32(static_cast<std::uint32_t>(pair.target.size()));
  w.f64(pair.dt);
  put_frame(w, pair.source);
  put_frame(w, pair.target);
  for (std::size_t i = 0; i < n1; ++i) {
    for (int c = 0; c < 3; ++c) w.f64(labels.gt_flow(static_cast<Eigen::Index>(i), c));
  }
  for (std::size_t i = 0; i < n1; ++i) w.u8(labels.gt_moving[i] ? 1 : 0);
  for (std::size_t i = 0; i < n1; ++i) w.u8(labels.valid[i] ? 1 : 0);
  put_transform(w, labels.gt_ego);
  w.write_file(path);
}

PairRecord read_record(const std::string& path) {
  detail::BinaryReader r(path);
  check_magic(r, "R4DF", kRecordVersion);
  const std::size_t n1 = r.u32();
  const std::size_t n2 = r.u32();
  PairRecord rec;
  rec.pair.dt = r.f64();
  rec.pair.source = get_frame(r, n1, 0.0);
  rec.pair.target = get_frame(r, n2, rec.pair.dt);
  rec.labels.gt_flow.resize(static_cast<Eigen::Index>(n1), 3);
  for (std::size_t i = 0; i < n1; ++i) {
    for (int c = 0; c < 3; ++c) rec.labels.gt_flow(static_cast<Eigen::Index>(i), c) = r.f64();
  }
  rec.labels.gt_moving.resize(n1);
  rec.labels.valid.resize(n1);
  for (std::size_t i = 0; i < n1; ++i) rec.labels.gt_moving[i] = r.u8() != 0;
  for (std::size_t i = 0; i < n1; ++i) rec.labels.valid[i] = r.u8() != 0;
  rec.labels.gt_ego = get_transform(r);
  check_end(r);
  return rec;
}

std::vector<std::string> list_split(const std::string& split_dir) {
  namespace fs = std::filesystem;
  const fs::path manifest = fs::path(split_dir) / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + manifest.string() + "'");
  std::vector<std::string> out;
  std::string line;
  bool in_records = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (in_records) {
      if (!line.empty()) out.push_back((fs::path(split_dir) / line).string());
    } else if (line == "records:") {
      in_records = true;
    }
  }
  if (out.empty()) throw Error(ErrorCode::DatasetEmpty, "no records listed in '" + manifest.string() + "'");
  return out;
}

void write_prediction(const std::string& path, const Prediction& prediction) {
  const std::size_t n = static_cast<std::size_t>(prediction.flow.rows());
  if (prediction.static_mask.size() != n) throw Error(ErrorCode::LengthMismatch, "mask does not match flow");
  detail::BinaryWriter w;
  w.bytes("R4DI");
  w.u32(kPredictionVersion);
  w.u32(static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) w.f64(prediction.flow(static_cast<Eigen::Index>(i), c));
  }
  for (bool b : prediction.static_mask) w.u8(b ? 1 : 0);
  put_transform(w, prediction.ego_motion);
  w.write_file(path);
}

Prediction read_prediction(const std::string& path) {
  detail::BinaryReader r(path);
  check_magic(r, "R4DI", kPredictionVersion);
  const std::size_t n = r.u32();
  Prediction p;
  p.flow.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) p.flow(static_cast<Eigen::Index>(i), c) = r.f64();
  }
  p.static_mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.static_mask[i] = r.u8() != 0;
  p.ego_motion = get_transform(r);
  check_end(r);
  return p;
}

}  // namespace raflow
