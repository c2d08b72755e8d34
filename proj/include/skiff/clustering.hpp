#pragma once

#include <vector>

namespace skiff {

/// Agglomerative clustering with complete linkage and Euclidean distance:
/// start from singletons and merge the closest pair of clusters until k
/// remain. Ties are broken deterministically by the lowest contained point
/// index. Returns a cluster id per point, ids numbered 0..k-1 in order of
/// first point occurrence.
std::vector<int> agglomerative_cluster(const std::vector<std::vector<double>>& points, int k);

}  // namespace skiff
