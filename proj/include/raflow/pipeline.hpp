#pragma once

#include "raflow/dataset.hpp"
#include "raflow/rofe.hpp"
#include "raflow/sfr.hpp"

namespace raflow {

struct ForwardOptions {
  bool use_sfr = true;
  MaskThresholds thresholds;  // zeta is taken from the model unless overridden
  bool override_zeta = false;
  bool warn_on_fallback = true;
};

/// ROFE followed by SFR, as one differentiable graph from the model weights to
/// the final flow. The mask is computed on the detached coarse flow.
struct ForwardResult {
  ad::Tensor coarse;
  ad::Tensor final_flow;
  StaticMask static_mask;
  RigidTransform ego_motion;
  RigidTransform coarse_ego;
  bool fallback = false;
};

ForwardResult forward(const RofeModel& model, const FramePair& pair, const ForwardOptions& opts = {});

/// Forward pass reduced to plain values.
Prediction infer(const RofeModel& model, const FramePair& pair, const ForwardOptions& opts = {});

}  // namespace raflow
