#include "skiff/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "skiff/errors.hpp"

namespace skiff {

namespace {

std::vector<std::vector<uint32_t>> indices_by_label(const Dataset& d) {
    std::vector<std::vector<uint32_t>> by_label(d.num_labels);
    for (size_t i = 0; i < d.rows; ++i) by_label[d.labels[i]].push_back(static_cast<uint32_t>(i));
    return by_label;
}

}  // namespace

nlohmann::json PartitionPlan::to_json() const {
    nlohmann::json j;
    j["scheme"] = scheme;
    j["clients"] = clients;
    j["seed"] = seed;
    j["assignment"] = assignment;
    return j;
}

PartitionPlan partition_iid(const Dataset& d, int clients, uint64_t seed) {
    d.validate();
    if (clients < 1) throw InfeasibleAssignment("need at least one client");
    PartitionPlan plan;
    plan.scheme = "iid";
    plan.clients = clients;
    plan.seed = seed;
    plan.assignment.resize(clients);
    std::mt19937_64 rng(seed);
    for (auto& idx : indices_by_label(d)) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t i = 0; i < idx.size(); ++i)
            plan.assignment[i % clients].push_back(idx[i]);
    }
    for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
    return plan;
}

PartitionPlan partition_label_skew(const Dataset& d, int clients, int delta, uint64_t seed) {
    d.validate();
    int l = d.num_labels;
    if (clients < 1) throw InfeasibleAssignment("need at least one client");
    if (delta < 1 || delta > l)
        throw InfeasibleAssignment("delta must be in [1, label count]");

    int shards_per_label =
        static_cast<int>((static_cast<int64_t>(clients) * delta + l - 1) / l);  // ceil(c*delta/l)

    std::mt19937_64 rng(seed);
    auto by_label = indices_by_label(d);
    // Per label: shuffled indices cut into shards_per_label near-equal shards.
    std::vector<std::vector<std::vector<uint32_t>>> shards(l);
    for (int lab = 0; lab < l; ++lab) {
        auto& idx = by_label[lab];
        std::shuffle(idx.begin(), idx.end(), rng);
        size_t n = idx.size();
        shards[lab].resize(shards_per_label);
        size_t base = n / shards_per_label, extra = n % shards_per_label;
        size_t pos = 0;
        for (int s = 0; s < shards_per_label; ++s) {
            size_t take = base + (static_cast<size_t>(s) < extra ? 1 : 0);
            shards[lab][s].assign(idx.begin() + pos, idx.begin() + pos + take);
            pos += take;
        }
    }

    std::vector<int> remaining(l, shards_per_label);
    PartitionPlan plan;
    plan.scheme = "label_skew";
    plan.clients = clients;
    plan.seed = seed;
    plan.assignment.resize(clients);
    std::vector<std::vector<int>> labels_of(clients);

    std::vector<int> client_order(clients);
    std::iota(client_order.begin(), client_order.end(), 0);
    std::shuffle(client_order.begin(), client_order.end(), rng);

    for (int c : client_order) {
        // delta distinct labels with the most shards left; ties broken by a
        // per-client random key so the assignment varies with the seed
        std::vector<uint64_t> tie(l);
        for (int lab = 0; lab < l; ++lab) tie[lab] = rng();
        std::vector<int> order(l);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (remaining[a] != remaining[b]) return remaining[a] > remaining[b];
            return tie[a] < tie[b];
        });
        for (int pick = 0; pick < delta; ++pick) {
            int lab = order[pick];
            if (remaining[lab] <= 0)
                throw InfeasibleAssignment("shard supply cannot satisfy delta labels per client");
            --remaining[lab];
            auto& shard = shards[lab][remaining[lab]];
            auto& dst = plan.assignment[c];
            dst.insert(dst.end(), shard.begin(), shard.end());
            labels_of[c].push_back(lab);
        }
    }

    // Leftover shards (ceil rounding) go to seeded-random clients that already
    // hold the label, so coverage is total without widening any client's
    // label set.
    for (int lab = 0; lab < l; ++lab) {
        while (remaining[lab] > 0) {
            --remaining[lab];
            auto& shard = shards[lab][remaining[lab]];
            std::vector<int> holders;
            for (int c = 0; c < clients; ++c)
                if (std::find(labels_of[c].begin(), labels_of[c].end(), lab) != labels_of[c].end())
                    holders.push_back(c);
            if (holders.empty())
                throw InfeasibleAssignment("leftover shard of a label no client holds");
            int c = holders[rng() % holders.size()];
            auto& dst = plan.assignment[c];
            dst.insert(dst.end(), shard.begin(), shard.end());
        }
    }

    for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
    return plan;
}

PartitionPlan partition_dirichlet(const Dataset& d, int clients, double alpha, uint64_t seed) {
    d.validate();
    if (clients < 1) throw InfeasibleAssignment("need at least one client");
    if (alpha <= 0) throw InfeasibleAssignment("alpha must be > 0");

    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> gamma(alpha, 1.0);

    PartitionPlan plan;
    plan.scheme = "dirichlet";
    plan.clients = clients;
    plan.seed = seed;
    plan.assignment.resize(clients);

    for (auto& idx : indices_by_label(d)) {
        std::shuffle(idx.begin(), idx.end(), rng);
        size_t m = idx.size();
        std::vector<double> p(clients);
        double total = 0;
        for (auto& v : p) {
            v = std::max(gamma(rng), 1e-300);
            total += v;
        }
        // largest-remainder apportionment of m samples by proportion
        std::vector<size_t> counts(clients);
        std::vector<std::pair<double, int>> frac(clients);
        size_t assigned = 0;
        for (int c = 0; c < clients; ++c) {
            double share = static_cast<double>(m) * p[c] / total;
            counts[c] = static_cast<size_t>(std::floor(share));
            frac[c] = {share - std::floor(share), c};
            assigned += counts[c];
        }
        std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t i = 0; assigned < m; ++i, ++assigned) ++counts[frac[i % clients].second];

        size_t pos = 0;
        for (int c = 0; c < clients; ++c) {
            plan.assignment[c].insert(plan.assignment[c].end(), idx.begin() + pos,
                                      idx.begin() + pos + counts[c]);
            pos += counts[c];
        }
    }

    for (auto& a : plan.assignment) std::sort(a.begin(), a.end());
    return plan;
}

SkewMetrics skew_metrics(const PartitionPlan& plan, const Dataset& d) {
    d.validate();
    int l = d.num_labels;

    std::vector<double> global(l, 0.0);
    for (int32_t y : d.labels) global[y] += 1.0;
    for (auto& g : global) g /= static_cast<double>(d.rows);

    double cv_sum = 0, js_sum = 0;
    size_t counted = 0;
    for (const auto& idx : plan.assignment) {
        if (idx.empty()) continue;  // empty clients are skipped
        std::vector<double> counts(l, 0.0);
        for (uint32_t i : idx) counts[d.labels[i]] += 1.0;
        double n = static_cast<double>(idx.size());

        double mean = n / static_cast<double>(l);
        double var = 0;
        for (double c : counts) var += (c - mean) * (c - mean);
        var /= static_cast<double>(l);
        cv_sum += std::sqrt(var) / mean;

        double js = 0;
        for (int j = 0; j < l; ++j) {
            double p = counts[j] / n;
            double q = global[j];
            double m = 0.5 * (p + q);
            if (p > 0) js += 0.5 * p * std::log(p / m);
            if (q > 0) js += 0.5 * q * std::log(q / m);
        }
        js_sum += js;
        ++counted;
    }
    SkewMetrics out;
    if (counted > 0) {
        out.cv = cv_sum / static_cast<double>(counted);
        out.js = js_sum / static_cast<double>(counted);
    }
    return out;
}

}  // namespace skiff
