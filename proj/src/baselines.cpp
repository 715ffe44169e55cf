#include "raflow/baselines.hpp"

#include <algorithm>

#include "raflow/geometry.hpp"
#include "raflow/neighbors.hpp"

namespace raflow {
namespace {

struct Matches {
  std::vector<std::size_t> target;
  std::vector<double> sq_dist;
  double objective = 0.0;
};

Matches match(const Points3& moved, const Points3& dst) {
  Matches m;
  m.target = nearest(dst, moved);
  m.sq_dist.resize(m.target.size());
  for (std::size_t i = 0; i < m.target.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    m.sq_dist[i] = (moved.row(row) - dst.row(static_cast<Eigen::Index>(m.target[i]))).squaredNorm();
    m.objective += m.sq_dist[i];
  }
  m.objective /= static_cast<double>(m.target.size());
  return m;
}

Points3 transformed(const RigidTransform& t, const Points3& p) {
  Points3 out = p * t.rotation.transpose();
  out.rowwise() += t.translation.transpose();
  return out;
}

}  // namespace

IcpResult icp(const FramePair& pair, std::size_t max_iters, double tol) {
  if (pair.source.size() < 3 || pair.target.size() < 3) {
    throw Error(ErrorCode::TooFewPoints, "icp needs at least 3 points per frame");
  }
  const Points3 src = positions(pair.source);
  const Points3 dst = positions(pair.target);

  IcpResult out;
  Matches m = match(src, dst);
  out.objective.push_back(m.objective);
  Points3 moved = src;

  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<double> dist(m.sq_dist);
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2), dist.end());
    const double median = std::sqrt(dist[dist.size() / 2]);
    const double cutoff = 9.0 * median * median;

    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < m.sq_dist.size(); ++i) {
      if (m.sq_dist[i] <= cutoff) keep.push_back(static_cast<Eigen::Index>(i));
    }
    if (keep.size() < 3) break;
    Points3 a(static_cast<Eigen::Index>(keep.size()), 3), b(static_cast<Eigen::Index>(keep.size()), 3);
    for (std::size_t k = 0; k < keep.size(); ++k) {
      a.row(static_cast<Eigen::Index>(k)) = src.row(keep[k]);
      b.row(static_cast<Eigen::Index>(k)) = dst.row(static_cast<Eigen::Index>(m.target[keep[k]]));
    }
    RigidTransform next;
    try {
      next = kabsch(a, b);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateConfiguration) break;
      throw;
    }

    const Points3 candidate = transformed(next, src);
    Matches cm = match(candidate, dst);
    if (cm.objective > m.objective) break;
    const double shift = (candidate - moved).rowwise().norm().mean();
    out.transform = next;
    moved = candidate;
    m = std::move(cm);
    out.objective.push_back(m.objective);
    ++out.iterations;
    if (shift < tol) break;
  }
  out.flow = transform_to_flow(out.transform, src);
  return out;
}

SceneFlow rigid_only_flow(const FramePair& pair) { return icp(pair, 1).flow; }

}  // namespace raflow
