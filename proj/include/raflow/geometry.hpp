#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "raflow/core.hpp"

namespace raflow {

struct SphericalResolution {
  double d_range = 0.2;      // m
  double d_azimuth = 0.0;    // rad
  double d_elevation = 0.0;  // rad
};

/// Range, azimuth (atan2(y, x)) and elevation (asin(z / r)).
template <typename Scalar>
struct SphericalT {
  Scalar range;
  Scalar azimuth;
  Scalar elevation;
};
using Spherical = SphericalT<double>;

/// Least-squares rigid fit: the transform minimizing Σ||T·src_i − dst_i||².
/// Rows of src and dst are paired points.
template <typename DerivedA, typename DerivedB>
RigidTransformT<typename DerivedA::Scalar> kabsch(const Eigen::MatrixBase<DerivedA>& src,
                                                  const Eigen::MatrixBase<DerivedB>& dst) {
  using Scalar = typename DerivedA::Scalar;
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  static_assert(DerivedA::ColsAtCompileTime == 3 || DerivedA::ColsAtCompileTime == Eigen::Dynamic);

  if (src.rows() != dst.rows() || src.cols() != 3 || dst.cols() != 3) {
    throw Error(ErrorCode::LengthMismatch, "kabsch needs paired N x 3 point sets");
  }
  const Eigen::Index n = src.rows();
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "kabsch needs at least 3 pairs");

  const Vec3 src_mean = src.colwise().mean().transpose();
  const Vec3 dst_mean = dst.colwise().mean().transpose();
  Mat3 cov = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    cov.noalias() += (src.row(i).transpose() - src_mean) * (dst.row(i).transpose() - dst_mean).transpose();
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma = svd.singularValues();
  // Rank < 2 leaves a rotation about an undetermined axis.
  if (!(sigma(0) > Scalar(0)) || sigma(1) <= Scalar(1e-12) * sigma(0)) {
    throw Error(ErrorCode::DegenerateConfiguration, "cross-covariance rank < 2");
  }
  const Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if ((v * u.transpose()).determinant() < Scalar(0)) v.col(2) *= Scalar(-1);

  RigidTransformT<Scalar> out;
  out.rotation = v * u.transpose();
  out.translation = dst_mean - out.rotation * src_mean;
  return out;
}

/// Per point: R·x + t − x.
template <typename Derived>
Points3T<typename Derived::Scalar> transform_to_flow(const RigidTransformT<typename Derived::Scalar>& t,
                                                     const Eigen::MatrixBase<Derived>& points) {
  Points3T<typename Derived::Scalar> flow = points * t.rotation.transpose();
  flow.rowwise() += t.translation.transpose();
  flow -= points;
  return flow;
}

SceneFlow transform_to_flow(const RigidTransform& t, const RadarFrame& frame);

/// Shifts positions by flow; rrv/rcs/power are copied unchanged.
RadarFrame warp(const RadarFrame& frame, const SceneFlow& flow);

template <typename Scalar>
SphericalT<Scalar> cartesian_to_spherical(const Eigen::Matrix<Scalar, 3, 1>& p) {
  using std::asin;
  using std::atan2;
  const Scalar r = p.norm();
  if (!(r > Scalar(0))) throw Error(ErrorCode::OriginPoint, "spherical coordinates undefined at origin");
  Scalar s = p.z() / r;
  s = s > Scalar(1) ? Scalar(1) : (s < Scalar(-1) ? Scalar(-1) : s);
  return {r, atan2(p.y(), p.x()), asin(s)};
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> spherical_to_cartesian(const SphericalT<Scalar>& s) {
  using std::cos;
  using std::sin;
  const Scalar ce = cos(s.elevation);
  return {s.range * ce * cos(s.azimuth), s.range * ce * sin(s.azimuth), s.range * sin(s.elevation)};
}

/// Columns are ∂(X,Y,Z)/∂r, ∂/∂θ, ∂/∂φ of the spherical→Cartesian map.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> spherical_jacobian(const SphericalT<Scalar>& s) {
  using std::cos;
  using std::sin;
  const Scalar ca = cos(s.azimuth), sa = sin(s.azimuth);
  const Scalar ce = cos(s.elevation), se = sin(s.elevation);
  const Scalar r = s.range;
  Eigen::Matrix<Scalar, 3, 3> j;
  j << ce * ca, -r * ce * sa, -r * se * ca,
       ce * sa,  r * ce * ca, -r * se * sa,
       se,       Scalar(0),    r * ce;
  return j;
}

/// Cartesian resolution of a point seen by a sensor with fixed spherical
/// resolution: ΔX/ΔY/ΔZ as first-order sums of |∂c/∂h|·Δh, then their norm.
template <typename Scalar>
Scalar point_resolution(const Eigen::Matrix<Scalar, 3, 1>& p, const SphericalResolution& res) {
  const Eigen::Matrix<Scalar, 3, 3> j = spherical_jacobian(cartesian_to_spherical(p));
  const Eigen::Matrix<Scalar, 3, 1> steps(Scalar(res.d_range), Scalar(res.d_azimuth), Scalar(res.d_elevation));
  return (j.cwiseAbs() * steps).norm();
}

}  // namespace raflow
