#pragma once

// Independent reference implementations the unit and acceptance suites check
// the production code against. Everything here is deliberately written the
// slow, obvious way and shares no code with the implementation paths it
// verifies.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "skiff/dataset.hpp"
#include "skiff/weights.hpp"

namespace skiff::test {

// --- double-precision forward losses (independent of the engine) ----------

inline std::vector<double> flatten(const ModelWeights& w) {
    std::vector<double> out;
    for (const auto& [_, t] : w)
        for (float v : t.data) out.push_back(static_cast<double>(v));
    return out;
}

inline ModelWeights unflatten(const ModelWeights& like, const std::vector<double>& flat) {
    ModelWeights out = like;
    size_t i = 0;
    for (auto& [_, t] : out)
        for (auto& v : t.data) v = static_cast<float>(flat[i++]);
    return out;
}

/// Mean cross-entropy (or mse) loss of a logreg/mlp parameter vector, done
/// entirely in double from the flattened parameters.
inline double oracle_loss(const ModelWeights& shape_like, const std::vector<double>& flat,
                          const Dataset& d, const std::string& loss_fn) {
    // recover layout from tensor order (map order = lexicographic by name)
    std::map<std::string, std::pair<std::vector<uint32_t>, std::vector<double>>> tensors;
    size_t i = 0;
    for (const auto& [name, t] : shape_like) {
        std::vector<double> data(t.data.size());
        for (auto& v : data) v = flat[i++];
        tensors[name] = {t.shape, std::move(data)};
    }
    bool is_mlp = tensors.count("W1") > 0;
    size_t l = is_mlp ? tensors["W2"].first[0] : tensors["W"].first[0];
    size_t dim = is_mlp ? tensors["W1"].first[1] : tensors["W"].first[1];
    size_t h = is_mlp ? tensors["W1"].first[0] : 0;

    double total = 0;
    std::vector<double> z(l), a;
    for (size_t r = 0; r < d.rows; ++r) {
        const float* x = d.features.data() + r * dim;
        if (!is_mlp) {
            const auto& W = tensors["W"].second;
            const auto& b = tensors["b"].second;
            for (size_t j = 0; j < l; ++j) {
                double s = b[j];
                for (size_t k = 0; k < dim; ++k) s += W[j * dim + k] * x[k];
                z[j] = s;
            }
        } else {
            const auto& W1 = tensors["W1"].second;
            const auto& b1 = tensors["b1"].second;
            const auto& W2 = tensors["W2"].second;
            const auto& b2 = tensors["b2"].second;
            a.assign(h, 0.0);
            for (size_t j = 0; j < h; ++j) {
                double s = b1[j];
                for (size_t k = 0; k < dim; ++k) s += W1[j * dim + k] * x[k];
                a[j] = s > 0 ? s : 0.0;
            }
            for (size_t j = 0; j < l; ++j) {
                double s = b2[j];
                for (size_t k = 0; k < h; ++k) s += W2[j * h + k] * a[k];
                z[j] = s;
            }
        }
        int32_t y = d.labels[r];
        if (loss_fn == "mse") {
            double s = 0;
            for (size_t j = 0; j < l; ++j) {
                double t = (static_cast<int32_t>(j) == y) ? 1.0 : 0.0;
                s += (z[j] - t) * (z[j] - t);
            }
            total += s / static_cast<double>(l);
        } else {
            double zmax = *std::max_element(z.begin(), z.end());
            double denom = 0;
            for (double v : z) denom += std::exp(v - zmax);
            total += -(z[y] - zmax - std::log(denom));
        }
    }
    return total / static_cast<double>(d.rows);
}

/// Central finite differences of oracle_loss at the given parameters.
inline std::vector<double> finite_difference_gradient(const ModelWeights& w, const Dataset& d,
                                                      const std::string& loss_fn,
                                                      double h = 1e-4) {
    std::vector<double> flat = flatten(w);
    std::vector<double> grad(flat.size());
    for (size_t i = 0; i < flat.size(); ++i) {
        double orig = flat[i];
        flat[i] = orig + h;
        double up = oracle_loss(w, flat, d, loss_fn);
        flat[i] = orig - h;
        double down = oracle_loss(w, flat, d, loss_fn);
        flat[i] = orig;
        grad[i] = (up - down) / (2 * h);
    }
    return grad;
}

// --- aggregation references -----------------------------------------------

/// Elementwise weighted mean over flattened models, plain loops in double.
inline std::vector<double> brute_force_weighted_mean(
    const std::vector<std::pair<std::vector<double>, double>>& models) {
    std::vector<double> out(models[0].first.size(), 0.0);
    double total = 0;
    for (const auto& [_, n] : models) total += n;
    for (const auto& [vals, n] : models)
        for (size_t i = 0; i < vals.size(); ++i) out[i] += vals[i] * n / total;
    return out;
}

inline double fedasync_reference(double global, double update, int64_t tau, int64_t t, double alpha,
                                 double a) {
    double alpha_t = alpha * std::pow(static_cast<double>(t - tau) + 1.0, -a);
    return (1.0 - alpha_t) * global + alpha_t * update;
}

// --- exhaustive complete-linkage clustering --------------------------------

/// Reference agglomerative clustering that recomputes every cluster-pair
/// distance from the raw points at each step (no distance-matrix updates).
inline std::vector<int> reference_complete_linkage(const std::vector<std::vector<double>>& pts,
                                                   int k) {
    auto dist = [&](int a, int b) {
        double s = 0;
        for (size_t i = 0; i < pts[a].size(); ++i) {
            double d = pts[a][i] - pts[b][i];
            s += d * d;
        }
        return std::sqrt(s);
    };
    std::vector<std::vector<int>> clusters;
    for (size_t i = 0; i < pts.size(); ++i) clusters.push_back({static_cast<int>(i)});
    while (clusters.size() > static_cast<size_t>(k)) {
        double best = std::numeric_limits<double>::infinity();
        size_t bi = 0, bj = 1;
        for (size_t i = 0; i < clusters.size(); ++i) {
            for (size_t j = i + 1; j < clusters.size(); ++j) {
                double dmax = 0;
                for (int p : clusters[i])
                    for (int q : clusters[j]) dmax = std::max(dmax, dist(p, q));
                // tie-break: smallest minimum member index pair
                int mi = *std::min_element(clusters[i].begin(), clusters[i].end());
                int mj = *std::min_element(clusters[j].begin(), clusters[j].end());
                int lo = std::min(mi, mj), hi = std::max(mi, mj);
                int cur_lo, cur_hi;
                {
                    int cmi = *std::min_element(clusters[bi].begin(), clusters[bi].end());
                    int cmj = *std::min_element(clusters[bj].begin(), clusters[bj].end());
                    cur_lo = std::min(cmi, cmj);
                    cur_hi = std::max(cmi, cmj);
                }
                if (dmax < best || (dmax == best && (lo < cur_lo || (lo == cur_lo && hi < cur_hi)))) {
                    best = dmax;
                    bi = i;
                    bj = j;
                }
            }
        }
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + static_cast<long>(bj));
    }
    std::vector<int> label(pts.size(), -1);
    for (size_t c = 0; c < clusters.size(); ++c)
        for (int p : clusters[c]) label[p] = static_cast<int>(c);
    // normalize ids by first occurrence
    std::vector<int> remap(clusters.size(), -1);
    int next = 0;
    for (auto& l : label) {
        if (remap[l] < 0) remap[l] = next++;
        l = remap[l];
    }
    return label;
}

}  // namespace skiff::test
