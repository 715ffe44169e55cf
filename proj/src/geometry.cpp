#include "raflow/geometry.hpp"

namespace raflow {

SceneFlow transform_to_flow(const RigidTransform& t, const RadarFrame& frame) {
  return transform_to_flow(t, positions(frame));
}

RadarFrame warp(const RadarFrame& frame, const SceneFlow& flow) {
  if (static_cast<Eigen::Index>(frame.size()) != flow.rows()) {
    throw Error(ErrorCode::LengthMismatch, "flow length differs from frame size");
  }
  RadarFrame out = frame;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    out.points[i].position += flow.row(i).transpose();
  }
  return out;
}

}  // namespace raflow
