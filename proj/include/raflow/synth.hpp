#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "raflow/core.hpp"

namespace raflow {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Synthetic 4-D radar scene: static structures (walls, poles, parked boxes)
/// and lane-following rigid movers seen from a sensor with x forward, y left,
/// z up.
struct SceneConfig {
  std::uint64_t seed = 0;
  std::size_t n_static = 181;
  std::size_t n_movers = 2;
  std::size_t points_per_mover = 12;
  Range ego_speed{0.0, 12.0};      // m/s
  Range ego_yaw_rate{-0.2, 0.2};   // rad/s
  Range mover_speed{2.0, 8.0};     // m/s, world frame, along ±x
  double ego_acceleration = 0.0;   // m/s²; breaks the constant-velocity assumption when nonzero
  double dt = 0.1;                 // s
  double position_noise = 0.03;    // m, per axis
  double rrv_noise = 0.05;         // m/s
  double outlier_fraction = 0.2;   // share of ghost points in each frame
  double fov_azimuth = 1.0471975511965976;     // half-angle, rad (60°)
  double fov_elevation = 0.17453292519943295;  // half-angle, rad (10°)
  double max_range = 75.0;         // m
};

/// Throws ConfigInvalid.
void validate_scene_config(const SceneConfig& cfg);

/// Ghost points added per frame for a given number of real points.
std::size_t ghost_count(const SceneConfig& cfg);

struct GeneratedPair {
  FramePair pair;
  FrameLabels labels;
};

/// Deterministic in (cfg.seed, index). Ground truth flow maps each source
/// point to its position in the target sensor frame; RRV is synthesized from
/// it so that v_r·Δt = s_gtᵀ x/||x|| before noise.
GeneratedPair generate_pair(const SceneConfig& cfg, std::uint64_t index = 0);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct DatasetSummary {
  std::string manifest_path;
  std::array<std::size_t, 3> counts{};  // train, val, test
};

/// Writes <out>/{train,val,test}/pair_XXXXXX.r4df with a manifest per split
/// and a top-level manifest.txt. Pair k is generated with stream index k.
DatasetSummary generate_dataset(const SceneConfig& cfg, std::size_t n_pairs, const SplitRatios& ratios,
                                const std::string& out_dir);

std::string scene_config_text(const SceneConfig& cfg);

}  // namespace raflow
