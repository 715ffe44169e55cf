#pragma once

#include <cstddef>
#include <vector>

#include "raflow/core.hpp"
#include "raflow/tensor.hpp"

namespace raflow {

/// Thresholds for the static/moving decision. When |v_r·Δt| < eta_v the
/// relative residual is undefined and the absolute residual |r_i| is compared
/// against eta_abs instead.
struct MaskThresholds {
  double zeta = 0.15;
  double eta_v = 1e-3;   // m
  double eta_abs = 0.05; // m
};

/// |r / (v_r·Δt)| where defined; in the absolute branch the residual is
/// reported as zeta·|r| / eta_abs so that "e ≤ zeta" is the rule in both.
double relative_residual(double radial_residual, double rrv_dt, const MaskThresholds& th);
inline bool is_static_residual(double e, double zeta) { return e <= zeta; }

struct MaskResult {
  StaticMask mask;
  RigidTransform coarse_ego;            // T_cr, fit over every correspondence
  std::vector<double> radial_residuals; // r_i
  std::vector<double> residuals;        // e_i
};

/// Static-mask generation: warp by the coarse flow, fit T_cr over all
/// correspondences, and keep points whose rigid radial shift agrees with
/// their measured RRV·Δt.
MaskResult static_mask(const FramePair& pair, const SceneFlow& coarse, const MaskThresholds& th);
MaskResult static_mask(const FramePair& pair, const SceneFlow& coarse, double zeta);

struct SfrOutput {
  SceneFlow final_flow;
  StaticMask static_mask;
  RigidTransform ego_motion;  // T_r
  RigidTransform coarse_ego;  // T_cr
  std::vector<double> residuals;
  bool fallback = false;      // fewer than 3 usable static points
};

/// Differentiable refinement graph: final flow as a function of the coarse
/// flow tensor, with the mask held fixed.
struct RefineGraph {
  ad::Tensor final_flow;
  RigidTransform ego_motion;
  bool fallback = false;
};

/// T_r from static correspondences (x_i, x_i + s_c,i); static rows take the
/// rigid flow, moving rows keep the coarse flow. With fewer than 3 static
/// points (or a degenerate static set) T_r is the identity and the coarse flow
/// passes through.
RefineGraph refine(const FramePair& pair, const ad::Tensor& coarse, const StaticMask& mask);
SfrOutput refine(const FramePair& pair, const SceneFlow& coarse, const StaticMask& mask);

/// static_mask followed by refine.
SfrOutput static_flow_refinement(const FramePair& pair, const SceneFlow& coarse, const MaskThresholds& th);

struct MotionSplit {
  std::vector<std::size_t> moving;
  std::vector<std::size_t> stationary;
};

MotionSplit motion_segmentation(const StaticMask& mask);

/// Moving-point predictions (negated mask).
std::vector<bool> moving_flags(const StaticMask& mask);

}  // namespace raflow
