#include "raflow/neighbors.hpp"

#include <algorithm>
#include <utility>

namespace raflow {
namespace {

// (squared distance, index) sorted ascending; pair ordering breaks ties by index.
std::vector<std::pair<double, std::size_t>> ranked(const Points3& reference, const Eigen::RowVector3d& q) {
  std::vector<std::pair<double, std::size_t>> out(reference.rows());
  for (Eigen::Index j = 0; j < reference.rows(); ++j) {
    out[j] = {(reference.row(j) - q).squaredNorm(), static_cast<std::size_t>(j)};
  }
  return out;
}

}  // namespace

NeighborTable ball_query(const Points3& reference, const Points3& queries, double radius, std::size_t k,
                         bool same_cloud) {
  if (reference.rows() == 0) throw Error(ErrorCode::EmptyFrame, "ball_query over an empty reference");
  NeighborTable table{static_cast<std::size_t>(queries.rows()), k, {}};
  table.indices.reserve(table.queries * k);
  const double r2 = radius * radius;
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    auto cand = ranked(reference, queries.row(i));
    const std::size_t take = std::min<std::size_t>(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    std::size_t found = 0;
    while (found < take && cand[found].first <= r2) ++found;
    std::size_t fill;
    if (found > 0) {
      fill = cand[0].second;
    } else if (same_cloud) {
      fill = static_cast<std::size_t>(i);
    } else {
      fill = cand[0].second;
    }
    for (std::size_t s = 0; s < k; ++s) table.indices.push_back(s < found ? cand[s].second : fill);
  }
  return table;
}

NeighborTable ball_query(const RadarFrame& center_frame, const RadarFrame& query_frame, double radius,
                         std::size_t k) {
  return ball_query(positions(center_frame), positions(query_frame), radius, k, &center_frame == &query_frame);
}

NeighborTable knn(const Points3& reference, const Points3& queries, std::size_t k, bool exclude_self) {
  const std::size_t available = static_cast<std::size_t>(reference.rows()) - (exclude_self ? 1 : 0);
  if (reference.rows() == 0 || available == 0) throw Error(ErrorCode::TooFewPoints, "knn has no candidates");
  k = std::min(k, available);
  NeighborTable table{static_cast<std::size_t>(queries.rows()), k, {}};
  table.indices.reserve(table.queries * k);
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    auto cand = ranked(reference, queries.row(i));
    if (exclude_self && i < reference.rows()) cand.erase(cand.begin() + i);
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::size_t s = 0; s < k; ++s) table.indices.push_back(cand[s].second);
  }
  return table;
}

std::vector<std::size_t> nearest(const Points3& reference, const Points3& queries) {
  if (reference.rows() == 0) throw Error(ErrorCode::EmptyFrame, "nearest over an empty reference");
  std::vector<std::size_t> out(queries.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    Eigen::Index best = 0;
    (reference.rowwise() - queries.row(i)).rowwise().squaredNorm().minCoeff(&best);
    out[i] = static_cast<std::size_t>(best);
  }
  return out;
}

}  // namespace raflow
