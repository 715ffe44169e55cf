#pragma once

#include <cstddef>
#include <vector>

#include "raflow/core.hpp"

namespace raflow {

struct IcpResult {
  RigidTransform transform;
  SceneFlow flow;
  std::size_t iterations = 0;
  std::vector<double> objective;  // mean squared NN distance, initial value then one per accepted step
};

/// Point-to-point ICP from the identity. Each iteration matches every moved
/// source point to its nearest target point, drops matches farther than 3x the
/// median match distance, and refits with Kabsch. A step that would raise the
/// objective is rejected and ends the loop, as does a mean point shift below
/// tol. The flow applies the final transform to every source point.
IcpResult icp(const FramePair& pair, std::size_t max_iters = 50, double tol = 1e-6);

/// Every point treated as static: one ICP step.
SceneFlow rigid_only_flow(const FramePair& pair);

}  // namespace raflow
