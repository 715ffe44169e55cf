#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "raflow/error.hpp"

namespace raflow {

/// N x 3 row-major block of 3-vectors. Row-major so a block maps directly
/// onto a flat tensor buffer.
template <typename Scalar>
using Points3T = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points3 = Points3T<double>;

/// Per-source-point displacement vectors.
using SceneFlow = Points3;

/// One flag per source point; true = static.
using StaticMask = std::vector<bool>;

struct RadarPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double rrv = 0.0;    // m/s, positive = receding
  double rcs = 0.0;    // dBsm
  double power = 0.0;  // dBm
};

struct RadarFrame {
  std::vector<RadarPoint> points;
  double timestamp = 0.0;

  std::size_t size() const { return points.size(); }
};

struct FramePair {
  RadarFrame source;
  RadarFrame target;
  double dt = 0.1;
};

/// SE(3) pose: x -> rotation * x + translation.
template <typename Scalar>
struct RigidTransformT {
  Eigen::Matrix<Scalar, 3, 3> rotation = Eigen::Matrix<Scalar, 3, 3>::Identity();
  Eigen::Matrix<Scalar, 3, 1> translation = Eigen::Matrix<Scalar, 3, 1>::Zero();

  static RigidTransformT identity() { return {}; }

  template <typename Derived>
  Eigen::Matrix<Scalar, 3, 1> apply(const Eigen::MatrixBase<Derived>& p) const {
    return rotation * p + translation;
  }

  RigidTransformT inverse() const {
    RigidTransformT inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// this ∘ other
  RigidTransformT operator*(const RigidTransformT& other) const {
    RigidTransformT out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  Eigen::Matrix<Scalar, 4, 4> homogeneous() const {
    Eigen::Matrix<Scalar, 4, 4> h = Eigen::Matrix<Scalar, 4, 4>::Identity();
    h.template topLeftCorner<3, 3>() = rotation;
    h.template topRightCorner<3, 1>() = translation;
    return h;
  }

  /// ||RᵀR − I||_∞ and |det R − 1| both below tol.
  bool is_valid(Scalar tol = Scalar(1e-9)) const {
    const Scalar ortho =
        (rotation.transpose() * rotation - Eigen::Matrix<Scalar, 3, 3>::Identity()).cwiseAbs().maxCoeff();
    using std::abs;
    return ortho < tol && abs(rotation.determinant() - Scalar(1)) < tol;
  }
};
using RigidTransform = RigidTransformT<double>;

struct FrameLabels {
  SceneFlow gt_flow;
  std::vector<bool> gt_moving;
  std::vector<bool> valid;  // false for injected ghost points
  RigidTransform gt_ego;
};

struct HyperParams {
  std::size_t n_scales = 4;
  std::size_t c_local = 64;
  std::size_t c_cor = 512;
  std::vector<double> radii = {2.0, 4.0, 8.0, 16.0};
  double zeta = 0.15;
  double delta = 0.005;
  double epsilon = 0.1;
  double alpha = 0.5;
  std::size_t n_neighbors = 8;

  bool operator==(const HyperParams&) const = default;
};

HyperParams default_hyperparams();

/// Throws ConfigInvalid when an invariant is broken.
void validate_hyperparams(const HyperParams& hp);

/// Flat JSON document keyed by the field names.
std::string hyperparams_to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const std::string& text);

/// Returns the frame unchanged iff every point is finite and off the origin.
const RadarFrame& validate_frame(const RadarFrame& frame);

/// N x 3 positions of a frame.
Points3 positions(const RadarFrame& frame);

}  // namespace raflow
