#include "skiff/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "skiff/errors.hpp"

namespace skiff {

namespace {
double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}
}  // namespace

std::vector<int> agglomerative_cluster(const std::vector<std::vector<double>>& points, int k) {
    size_t n = points.size();
    if (k < 1 || static_cast<size_t>(k) > n)
        throw ShapeMismatch("cluster count must be in [1, point count]");
    for (const auto& p : points)
        if (p.size() != points[0].size()) throw ShapeMismatch("points have mixed dimensions");

    // Active clusters as member lists; pairwise complete-linkage distances
    // maintained with the Lance-Williams max update.
    std::vector<std::vector<int>> members(n);
    std::vector<bool> active(n, true);
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) members[i] = {static_cast<int>(i)};
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = euclidean(points[i], points[j]);

    size_t clusters = n;
    while (clusters > static_cast<size_t>(k)) {
        double best = std::numeric_limits<double>::infinity();
        int bi = -1, bj = -1;
        for (size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                double dij = dist[i][j];
                if (dij < best) {
                    best = dij;
                    bi = static_cast<int>(i);
                    bj = static_cast<int>(j);
                } else if (dij == best && bi >= 0) {
                    // lowest point index wins ties; slots hold their minimum
                    // member index since merges keep the smaller slot
                    if (static_cast<int>(i) < bi || (static_cast<int>(i) == bi && static_cast<int>(j) < bj)) {
                        bi = static_cast<int>(i);
                        bj = static_cast<int>(j);
                    }
                }
            }
        }
        // merge bj into bi (bi < bj, so the surviving slot keeps the smaller index)
        members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
        active[bj] = false;
        for (size_t t = 0; t < n; ++t) {
            if (!active[t] || static_cast<int>(t) == bi) continue;
            double d = std::max(dist[bi][t], dist[bj][t]);
            dist[bi][t] = dist[t][bi] = d;
        }
        --clusters;
    }

    std::vector<int> label(n, -1);
    int next_id = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        std::sort(members[i].begin(), members[i].end());
        for (int p : members[i]) label[p] = next_id;
        ++next_id;
    }
    // renumber ids by first point occurrence
    std::vector<int> remap(next_id, -1);
    int out_id = 0;
    for (size_t i = 0; i < n; ++i) {
        if (remap[label[i]] < 0) remap[label[i]] = out_id++;
        label[i] = remap[label[i]];
    }
    return label;
}

}  // namespace skiff
