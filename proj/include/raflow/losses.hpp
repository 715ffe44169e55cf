#pragma once

#include <cstddef>
#include <vector>

#include "raflow/core.hpp"
#include "raflow/tensor.hpp"

namespace raflow {

/// Which terms enter the objective, plus the reference variants used for
/// ablations: hard Chamfer (no density gate, no tolerance) and uniform
/// smoothness weights.
struct LossConfig {
  bool use_rd = true;
  bool use_sc = true;
  bool use_ss = true;
  bool hard_chamfer = false;
  bool uniform_smoothness = false;
  bool mean_reduction = false;

  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  double total = 0.0;
  double rd = 0.0;
  double sc = 0.0;
  double ss = 0.0;
  std::size_t discarded_src = 0;
  std::size_t discarded_dst = 0;
};

/// Σ_i | s_iᵀ x_i/||x_i|| − v_i^r·Δt |
ad::Tensor radial_displacement_loss(const FramePair& pair, const ad::Tensor& flow);
double radial_displacement_loss(const FramePair& pair, const SceneFlow& flow);

/// (2π)^{-3/2} normalizing constant of the unit isotropic 3-D Gaussian.
inline constexpr double kGaussianNorm = 0.063493635934240969;

/// Kernel density of each point against a reference cloud:
/// ν(p) = (1/N_ref) Σ_j N(ref_j; p, I).
std::vector<double> density(const Points3& points, const Points3& reference);
std::vector<double> density(const RadarFrame& points, const RadarFrame& reference);

struct ChamferTerm {
  ad::Tensor loss;
  std::size_t discarded_src = 0;
  std::size_t discarded_dst = 0;
};

/// Bidirectional nearest-neighbor loss on the warped source P' = P + S and
/// the target Q. Points whose density against the opposite cloud is ≤ delta
/// are dropped, and squared distances within epsilon cost nothing. Densities,
/// gates, and neighbor indices are treated as constants.
ChamferTerm soft_chamfer_loss(const FramePair& pair, const ad::Tensor& flow, double delta, double epsilon);
/// Plain Chamfer: every point kept, no tolerance.
ChamferTerm hard_chamfer_loss(const FramePair& pair, const ad::Tensor& flow);

/// Per-point neighbor weights for the smoothness term: for each point, its
/// n_neighbors nearest other points with weights softmax_j(exp(−d_ij²/α)),
/// or 1/k each when uniform.
struct SmoothnessWeights {
  std::size_t k = 0;
  std::vector<std::size_t> centers;
  std::vector<std::size_t> neighbors;
  std::vector<double> weights;
};
SmoothnessWeights smoothness_weights(const Points3& points, double alpha, std::size_t n_neighbors, bool uniform);

/// Σ_i Σ_{j∈O(i)} ŵ_ij ||s_i − s_j||²
ad::Tensor smoothness_loss(const RadarFrame& frame, const ad::Tensor& flow, double alpha, std::size_t n_neighbors,
                           bool uniform = false);

struct LossTerms {
  ad::Tensor total;
  ad::Tensor rd;
  ad::Tensor sc;
  ad::Tensor ss;
  std::size_t discarded_src = 0;
  std::size_t discarded_dst = 0;

  LossBreakdown values() const;
};

/// L = L_rd + L_sc + L_ss with disabled terms contributing exact zeros.
LossTerms total_loss(const FramePair& pair, const ad::Tensor& flow, const HyperParams& hp,
                     const LossConfig& cfg = {});
LossBreakdown total_loss(const FramePair& pair, const SceneFlow& flow, const HyperParams& hp,
                         const LossConfig& cfg = {});

}  // namespace raflow
