#pragma once

#include <cstddef>
#include <vector>

#include "raflow/core.hpp"

namespace raflow {

/// Row-major (queries x k) table of indices into a reference point set.
struct NeighborTable {
  std::size_t queries = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;

  std::size_t at(std::size_t query, std::size_t slot) const { return indices[query * k + slot]; }
};

/// For each query point, the k nearest reference points within radius, nearest
/// first (ties to the lower index). Short lists are padded with the nearest
/// hit; an empty ball falls back to the query itself when both sets are the
/// same cloud, otherwise to the overall nearest reference point.
NeighborTable ball_query(const Points3& reference, const Points3& queries, double radius, std::size_t k,
                         bool same_cloud);
NeighborTable ball_query(const RadarFrame& center_frame, const RadarFrame& query_frame, double radius,
                         std::size_t k);

/// k nearest reference points per query (ties to the lower index). With
/// exclude_self, reference index i is skipped for query i. When fewer than k
/// candidates exist, k shrinks to the candidate count.
NeighborTable knn(const Points3& reference, const Points3& queries, std::size_t k, bool exclude_self = false);

/// Index of the nearest reference point for each query.
std::vector<std::size_t> nearest(const Points3& reference, const Points3& queries);

}  // namespace raflow
