#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "skiff/dataset.hpp"

namespace skiff {

/// Client index -> sample indices. Produced deterministically from
/// (scheme, client count, seed).
struct PartitionPlan {
    std::string scheme;
    int clients = 0;
    uint64_t seed = 0;
    std::vector<std::vector<uint32_t>> assignment;

    nlohmann::json to_json() const;
};

/// Every label's samples split evenly across all clients.
PartitionPlan partition_iid(const Dataset& d, int clients, uint64_t seed);

/// Each label's samples are split into ceil(clients * delta / labels) equal
/// shards; every client receives `delta` shards of distinct labels. Leftover
/// shards go to clients already holding that label so all samples are
/// assigned. Throws InfeasibleAssignment when delta distinct labels cannot be
/// supplied to some client.
PartitionPlan partition_label_skew(const Dataset& d, int clients, int delta, uint64_t seed);

/// Per label, a Dirichlet(alpha) draw across clients apportions that label's
/// samples. Clients may end up empty; every sample is assigned exactly once.
PartitionPlan partition_dirichlet(const Dataset& d, int clients, double alpha, uint64_t seed);

struct SkewMetrics {
    double cv = 0;  // mean over clients of std/mean of the client's label-count vector
    double js = 0;  // mean Jensen-Shannon divergence (natural log) vs the dataset distribution
};

SkewMetrics skew_metrics(const PartitionPlan& plan, const Dataset& d);

}  // namespace skiff
