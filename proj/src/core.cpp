#include "raflow/core.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

namespace raflow {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyFrame: return "EmptyFrame";
    case ErrorCode::OriginPoint: return "OriginPoint";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidAxis: return "InvalidAxis";
    case ErrorCode::GatherOutOfBounds: return "GatherOutOfBounds";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::StaleTape: return "StaleTape";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DatasetEmpty: return "DatasetEmpty";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
  }
  return "Unknown";
}

HyperParams default_hyperparams() { return HyperParams{}; }

void validate_hyperparams(const HyperParams& hp) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, msg); };
  if (hp.n_scales == 0) fail("n_scales must be positive");
  if (hp.radii.size() != hp.n_scales) fail("radii must have n_scales entries");
  for (std::size_t i = 0; i < hp.radii.size(); ++i) {
    if (!(hp.radii[i] > 0.0)) fail("radii must be positive");
    if (i > 0 && !(hp.radii[i] > hp.radii[i - 1])) fail("radii must be strictly increasing");
  }
  if (hp.c_local < 2 || hp.c_local % 2 != 0) fail("c_local must be an even count >= 2");
  if (hp.c_cor < 4 || hp.c_cor % 4 != 0) fail("c_cor must be a multiple of 4");
  if (!(hp.zeta > 0.0) || !(hp.delta > 0.0) || !(hp.epsilon > 0.0) || !(hp.alpha > 0.0)) {
    fail("thresholds must be positive");
  }
  if (hp.n_neighbors == 0) fail("n_neighbors must be positive");
}

std::string hyperparams_to_json(const HyperParams& hp) {
  nlohmann::ordered_json j;
  j["n_scales"] = hp.n_scales;
  j["c_local"] = hp.c_local;
  j["c_cor"] = hp.c_cor;
  j["radii"] = hp.radii;
  j["zeta"] = hp.zeta;
  j["delta"] = hp.delta;
  j["epsilon"] = hp.epsilon;
  j["alpha"] = hp.alpha;
  j["n_neighbors"] = hp.n_neighbors;
  return j.dump(2);
}

HyperParams hyperparams_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be an object");

  static const std::set<std::string> known = {"n_scales", "c_local", "c_cor",   "radii",      "zeta",
                                              "delta",    "epsilon", "alpha", "n_neighbors"};
  HyperParams hp;
  try {
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "'");
    }
    if (j.contains("n_scales")) hp.n_scales = j["n_scales"].get<std::size_t>();
    if (j.contains("c_local")) hp.c_local = j["c_local"].get<std::size_t>();
    if (j.contains("c_cor")) hp.c_cor = j["c_cor"].get<std::size_t>();
    if (j.contains("radii")) hp.radii = j["radii"].get<std::vector<double>>();
    if (j.contains("zeta")) hp.zeta = j["zeta"].get<double>();
    if (j.contains("delta")) hp.delta = j["delta"].get<double>();
    if (j.contains("epsilon")) hp.epsilon = j["epsilon"].get<double>();
    if (j.contains("alpha")) hp.alpha = j["alpha"].get<double>();
    if (j.contains("n_neighbors")) hp.n_neighbors = j["n_neighbors"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  validate_hyperparams(hp);
  return hp;
}

const RadarFrame& validate_frame(const RadarFrame& frame) {
  if (frame.points.empty()) throw Error(ErrorCode::EmptyFrame, "frame has no points");
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& p = frame.points[i];
    if (!p.position.allFinite() || !std::isfinite(p.rrv) || !std::isfinite(p.rcs) ||
        !std::isfinite(p.power)) {
      throw Error(ErrorCode::NonFinite, "point " + std::to_string(i) + " is not finite");
    }
    if (p.position.norm() == 0.0) {
      throw Error(ErrorCode::OriginPoint, "point " + std::to_string(i) + " sits at the sensor origin");
    }
  }
  return frame;
}

Points3 positions(const RadarFrame& frame) {
  Points3 out(frame.points.size(), 3);
  for (std::size_t i = 0; i < frame.points.size(); ++i) out.row(i) = frame.points[i].position.transpose();
  return out;
}

}  // namespace raflow
