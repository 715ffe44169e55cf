#pragma once

#include <string>
#include <vector>

#include "raflow/core.hpp"

namespace raflow {

// Pair record, little-endian:
//   "R4DF", version u32, N1 u32, N2 u32, dt f64,
//   source N1 x (x, y, z, rrv, rcs, power) f64, target N2 x 6 f64,
//   gt flow N1 x 3 f64, gt moving N1 u8, valid N1 u8, gt ego 3 x 4 [R|t] f64 row-major.
void write_record(const std::string& path, const FramePair& pair, const FrameLabels& labels);

struct PairRecord {
  FramePair pair;
  FrameLabels labels;
};

PairRecord read_record(const std::string& path);

/// Record paths listed by <split_dir>/manifest.txt, in manifest order.
std::vector<std::string> list_split(const std::string& split_dir);

// Inference output: "R4DI", version u32, N1 u32, flow N1 x 3 f64,
// static mask N1 u8, ego 3 x 4 [R|t] f64 row-major.
struct Prediction {
  SceneFlow flow;
  StaticMask static_mask;
  RigidTransform ego_motion;
};

void write_prediction(const std::string& path, const Prediction& prediction);
Prediction read_prediction(const std::string& path);

}  // namespace raflow
