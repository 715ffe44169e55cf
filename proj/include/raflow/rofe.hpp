#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "raflow/core.hpp"
#include "raflow/neighbors.hpp"
#include "raflow/tensor.hpp"

namespace raflow {

/// Per-channel enable flags for the three radar features; a disabled channel
/// is fed as zeros so network shapes never change.
struct InputChannels {
  bool rrv = true;
  bool rcs = true;
  bool power = true;

  bool operator==(const InputChannels&) const = default;
};

inline constexpr std::size_t kInputChannels = 6;

struct Linear {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // 1 x out
};

/// Radius grouping, per-neighbor MLP on [neighbor features, displacement],
/// max over neighbors. The first MLP layer is stored split by input block so
/// the feature part is applied once per point rather than once per neighbor.
struct SetConvLayer {
  double radius = 0.0;
  std::size_t sample_count = 0;
  std::vector<std::size_t> mlp_widths;
  ad::Tensor w_feat;
  ad::Tensor w_disp;
  ad::Tensor b_first;
  std::vector<Linear> rest;
};

/// Point-to-patch correlation over target neighbors followed by a
/// patch-to-patch aggregation over source neighbors; each stage pools its
/// neighbors with softmax weights from a learned scalar head.
struct CostVolumeLayer {
  std::size_t sample_count = 8;
  std::vector<std::size_t> mlp_widths;  // two point-to-patch layers, one patch-to-patch layer
  ad::Tensor w_src;
  ad::Tensor w_dst;
  ad::Tensor w_disp;
  ad::Tensor b_first;
  Linear second;
  ad::Tensor score_point;  // c x 1, bias-free
  ad::Tensor w_patch_cost;
  ad::Tensor w_patch_disp;
  ad::Tensor b_patch;
  ad::Tensor score_patch;  // c x 1
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

class RofeModel {
 public:
  /// Builds the architecture implied by hp (the defaults give the reference
  /// widths) with uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases,
  /// and a zero output layer.
  static RofeModel create(const HyperParams& hp, std::uint64_t seed, InputChannels channels = {});

  const HyperParams& hyperparams() const { return hp_; }
  const InputChannels& channels() const { return channels_; }
  void set_channels(InputChannels channels) { channels_ = channels; }

  std::vector<SetConvLayer> encoder;
  CostVolumeLayer cost;
  std::vector<SetConvLayer> decoder;
  std::vector<Linear> output;

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Local + global feature width: 2·n_scales·c_local.
  std::size_t feature_width() const { return 2 * hp_.n_scales * hp_.c_local; }

 private:
  HyperParams hp_;
  InputChannels channels_;
};

/// Widths each layer must have for a given HyperParams; throws ConfigInvalid on any mismatch.
void check_architecture(const RofeModel& model);

/// Per-frame neighbor structure reused by every scale.
struct FrameNeighbors {
  Points3 points;
  std::vector<NeighborTable> balls;  // one per scale
};

FrameNeighbors prepare_neighbors(const RadarFrame& frame, const HyperParams& hp);

/// N x 6 normalized input channels (x, y, z, rrv, rcs, power).
ad::Tensor input_features(const RadarFrame& frame, const InputChannels& channels);

/// Multi-scale set-conv features concatenated with their max-pooled global
/// vector: N x 2·Σ C_k.
ad::Tensor encode(const RofeModel& model, const RadarFrame& frame);
ad::Tensor encode(const RofeModel& model, const RadarFrame& frame, const FrameNeighbors& nb);

/// Correlated features H: N1 x C_cor.
ad::Tensor cost_volume(const RofeModel& model, const RadarFrame& src_frame, const ad::Tensor& src_feats,
                       const RadarFrame& dst_frame, const ad::Tensor& dst_feats);

/// Coarse flow S_c: N1 x 3.
ad::Tensor decode(const RofeModel& model, const RadarFrame& src_frame, const ad::Tensor& correlated,
                  const ad::Tensor& src_feats);
ad::Tensor decode(const RofeModel& model, const RadarFrame& src_frame, const FrameNeighbors& nb,
                  const ad::Tensor& correlated, const ad::Tensor& src_feats);

/// Full ROFE pass: encode both frames with shared weights, correlate, decode.
ad::Tensor estimate_flow(const RofeModel& model, const FramePair& pair);

SceneFlow to_flow(const ad::Tensor& t);
ad::Tensor flow_tensor(const SceneFlow& flow, bool requires_grad = false);

// Model checkpoint: "R4DC" magic, format version, HyperParams and channel
// echo, then named little-endian double blobs with their shapes.
void save_checkpoint(const RofeModel& model, const std::string& path);
RofeModel load_checkpoint(const std::string& path);

}  // namespace raflow
