#include "raflow/losses.hpp"

#include <cmath>
#include <limits>

#include "raflow/neighbors.hpp"
#include "raflow/rofe.hpp"

namespace raflow {
namespace {

void check_flow(const RadarFrame& frame, const ad::Tensor& flow) {
  if (flow.shape() != ad::Shape{frame.size(), 3}) {
    throw Error(ErrorCode::LengthMismatch, "flow " + ad::shape_string(flow.shape()) + " for " +
                                               std::to_string(frame.size()) + " source points");
  }
}

ad::Tensor rows_of(const Points3& p, const std::vector<std::size_t>& rows) {
  std::vector<double> v;
  v.reserve(rows.size() * 3);
  for (std::size_t r : rows) {
    v.push_back(p(r, 0));
    v.push_back(p(r, 1));
    v.push_back(p(r, 2));
  }
  return ad::Tensor::constant({rows.size(), 3}, std::move(v));
}

ad::Tensor hinge_sum(const ad::Tensor& a, const ad::Tensor& b, double epsilon) {
  return ad::sum(ad::relu(ad::add_scalar(ad::squared_norm(ad::sub(a, b), 1), -epsilon)));
}

ChamferTerm chamfer(const FramePair& pair, const ad::Tensor& flow, double delta, double epsilon) {
  check_flow(pair.source, flow);
  const Points3 x = positions(pair.source);
  const Points3 q = positions(pair.target);
  const Points3 warped = x + to_flow(flow);
  const ad::Tensor warped_t = ad::add(flow_tensor(x), flow);

  const std::vector<double> nu_src = density(warped, q);
  const std::vector<double> nu_dst = density(q, warped);
  const std::vector<std::size_t> nn_src = nearest(q, warped);
  const std::vector<std::size_t> nn_dst = nearest(warped, q);

  ChamferTerm out;
  std::vector<std::size_t> keep_src, match_src, keep_dst, match_dst;
  for (std::size_t i = 0; i < nu_src.size(); ++i) {
    if (nu_src[i] > delta) {
      keep_src.push_back(i);
      match_src.push_back(nn_src[i]);
    } else {
      ++out.discarded_src;
    }
  }
  for (std::size_t j = 0; j < nu_dst.size(); ++j) {
    if (nu_dst[j] > delta) {
      keep_dst.push_back(j);
      match_dst.push_back(nn_dst[j]);
    } else {
      ++out.discarded_dst;
    }
  }

  ad::Tensor forward = keep_src.empty()
                           ? ad::Tensor::scalar(0.0)
                           : hinge_sum(ad::gather(warped_t, keep_src), rows_of(q, match_src), epsilon);
  ad::Tensor backward = keep_dst.empty()
                            ? ad::Tensor::scalar(0.0)
                            : hinge_sum(rows_of(q, keep_dst), ad::gather(warped_t, match_dst), epsilon);
  out.loss = ad::add(forward, backward);
  return out;
}

}  // namespace

ad::Tensor radial_displacement_loss(const FramePair& pair, const ad::Tensor& flow) {
  check_flow(pair.source, flow);
  const std::size_t n = pair.source.size();
  std::vector<double> unit(n * 3), target(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RadarPoint& p = pair.source.points[i];
    const double r = p.position.norm();
    if (r == 0.0) throw Error(ErrorCode::OriginPoint, "radial direction undefined at the sensor origin");
    for (int c = 0; c < 3; ++c) unit[i * 3 + c] = p.position(c) / r;
    target[i] = p.rrv * pair.dt;
  }
  const ad::Tensor radial = ad::sum(ad::mul(flow, ad::Tensor::constant({n, 3}, std::move(unit))), 1);
  return ad::sum(ad::abs(ad::sub(radial, ad::Tensor::constant({n}, std::move(target)))));
}

double radial_displacement_loss(const FramePair& pair, const SceneFlow& flow) {
  return radial_displacement_loss(pair, flow_tensor(flow)).item();
}

std::vector<double> density(const Points3& points, const Points3& reference) {
  if (reference.rows() == 0) throw Error(ErrorCode::EmptyFrame, "density against an empty reference");
  std::vector<double> out(points.rows());
  const double inv_n = 1.0 / static_cast<double>(reference.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < reference.rows(); ++j) {
      acc += std::exp(-0.5 * (reference.row(j) - points.row(i)).squaredNorm());
    }
    out[i] = kGaussianNorm * acc * inv_n;
  }
  return out;
}

std::vector<double> density(const RadarFrame& points, const RadarFrame& reference) {
  return density(positions(points), positions(reference));
}

ChamferTerm soft_chamfer_loss(const FramePair& pair, const ad::Tensor& flow, double delta, double epsilon) {
  return chamfer(pair, flow, delta, epsilon);
}

ChamferTerm hard_chamfer_loss(const FramePair& pair, const ad::Tensor& flow) {
  return chamfer(pair, flow, -std::numeric_limits<double>::infinity(), 0.0);
}

SmoothnessWeights smoothness_weights(const Points3& points, double alpha, std::size_t n_neighbors, bool uniform) {
  if (points.rows() < 2) throw Error(ErrorCode::TooFewPoints, "smoothness needs at least 2 points");
  const NeighborTable nb = knn(points, points, n_neighbors, /*exclude_self=*/true);
  SmoothnessWeights w;
  w.k = nb.k;
  const std::size_t n = nb.queries;
  w.centers.resize(n * nb.k);
  w.neighbors = nb.indices;
  w.weights.resize(n * nb.k);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t s = 0; s < nb.k; ++s) {
      const std::size_t slot = i * nb.k + s;
      w.centers[slot] = i;
      const double kernel = std::exp(-(points.row(i) - points.row(nb.at(i, s))).squaredNorm() / alpha);
      w.weights[slot] = uniform ? 1.0 : std::exp(kernel);
      z += w.weights[slot];
    }
    for (std::size_t s = 0; s < nb.k; ++s) w.weights[i * nb.k + s] /= z;
  }
  return w;
}

ad::Tensor smoothness_loss(const RadarFrame& frame, const ad::Tensor& flow, double alpha, std::size_t n_neighbors,
                           bool uniform) {
  check_flow(frame, flow);
  const SmoothnessWeights w = smoothness_weights(positions(frame), alpha, n_neighbors, uniform);
  const ad::Tensor diff = ad::sub(ad::gather(flow, w.centers), ad::gather(flow, w.neighbors));
  const ad::Tensor weights = ad::Tensor::constant({w.weights.size()}, w.weights);
  return ad::sum(ad::mul(weights, ad::squared_norm(diff, 1)));
}

LossBreakdown LossTerms::values() const {
  return {total.item(), rd.item(), sc.item(), ss.item(), discarded_src, discarded_dst};
}

LossTerms total_loss(const FramePair& pair, const ad::Tensor& flow, const HyperParams& hp, const LossConfig& cfg) {
  LossTerms t;
  const double n_src = static_cast<double>(pair.source.size());
  const double n_all = n_src + static_cast<double>(pair.target.size());
  auto reduce = [&](ad::Tensor x, double count) { return cfg.mean_reduction ? ad::scale(x, 1.0 / count) : x; };

  t.rd = cfg.use_rd ? reduce(radial_displacement_loss(pair, flow), n_src) : ad::Tensor::scalar(0.0);
  if (cfg.use_sc) {
    ChamferTerm c = cfg.hard_chamfer ? hard_chamfer_loss(pair, flow)
                                     : soft_chamfer_loss(pair, flow, hp.delta, hp.epsilon);
    t.sc = reduce(c.loss, n_all);
    t.discarded_src = c.discarded_src;
    t.discarded_dst = c.discarded_dst;
  } else {
    t.sc = ad::Tensor::scalar(0.0);
  }
  t.ss = cfg.use_ss
             ? reduce(smoothness_loss(pair.source, flow, hp.alpha, hp.n_neighbors, cfg.uniform_smoothness), n_src)
             : ad::Tensor::scalar(0.0);
  t.total = ad::add(ad::add(t.rd, t.sc), t.ss);
  return t;
}

LossBreakdown total_loss(const FramePair& pair, const SceneFlow& flow, const HyperParams& hp, const LossConfig& cfg) {
  return total_loss(pair, flow_tensor(flow), hp, cfg).values();
}

}  // namespace raflow
