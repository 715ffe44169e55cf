#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "raflow/core.hpp"
#include "raflow/rng.hpp"
#include "raflow/tensor.hpp"

namespace raflow::testing {

/// Code of the raflow::Error thrown by fn, or nothing when it returns normally.
template <typename Fn>
std::optional<ErrorCode> error_code(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline ad::Tensor random_parameter(ad::Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::parameter(std::move(shape), std::move(v));
}

inline ad::Tensor random_constant(ad::Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::constant(std::move(shape), std::move(v));
}

/// Largest relative error, over the listed leaves, between the backward()
/// gradient of f and central differences with step h. Each leaf is compared
/// as a whole vector: ||g_analytic − g_numeric|| / max(||g_analytic||, ||g_numeric||),
/// falling back to the absolute error when both are below 1e-12.
inline double gradient_error(const std::function<ad::Tensor()>& f, const std::vector<ad::Tensor>& leaves,
                             double h = 1e-6) {
  for (const ad::Tensor& t : leaves) {
    ad::Tensor copy = t;
    copy.zero_grad();
  }
  f().backward();
  double worst = 0.0;
  for (const ad::Tensor& t : leaves) {
    ad::Tensor leaf = t;
    const std::vector<double> analytic = leaf.grad();
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.mutable_data()[i] = saved + h;
      const double up = f().item();
      leaf.mutable_data()[i] = saved - h;
      const double down = f().item();
      leaf.mutable_data()[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double scale = std::sqrt(std::max(na, nn));
    worst = std::max(worst, scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale);
    leaf.zero_grad();
  }
  return worst;
}

/// As gradient_error, but with every leaf stacked into one parameter vector.
inline double joint_gradient_error(const std::function<ad::Tensor()>& f, const std::vector<ad::Tensor>& leaves,
                                   double h = 1e-6) {
  for (const ad::Tensor& t : leaves) {
    ad::Tensor copy = t;
    copy.zero_grad();
  }
  f().backward();
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (const ad::Tensor& t : leaves) {
    ad::Tensor leaf = t;
    const std::vector<double> analytic = leaf.grad();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.mutable_data()[i] = saved + h;
      const double up = f().item();
      leaf.mutable_data()[i] = saved - h;
      const double down = f().item();
      leaf.mutable_data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    leaf.zero_grad();
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline RadarPoint point(double x, double y, double z, double rrv = 0.0, double rcs = 0.0, double power = 0.0) {
  RadarPoint p;
  p.position = {x, y, z};
  p.rrv = rrv;
  p.rcs = rcs;
  p.power = power;
  return p;
}

/// Points scattered in a box in front of the sensor with random features.
inline RadarFrame random_frame(std::size_t n, CounterRng& rng, double extent = 6.0) {
  RadarFrame f;
  for (std::size_t i = 0; i < n; ++i) {
    f.points.push_back(point(rng.uniform(3.0, 3.0 + extent), rng.uniform(-extent / 2, extent / 2),
                             rng.uniform(-1.0, 1.0), rng.uniform(-3.0, 3.0), rng.uniform(-5.0, 10.0),
                             rng.uniform(-60.0, -20.0)));
  }
  return f;
}

inline SceneFlow random_flow(std::size_t n, CounterRng& rng, double magnitude = 0.5) {
  SceneFlow s(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (int c = 0; c < 3; ++c) s(i, c) = rng.uniform(-magnitude, magnitude);
  return s;
}

inline Eigen::Matrix3d random_rotation(CounterRng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
}

}  // namespace raflow::testing
