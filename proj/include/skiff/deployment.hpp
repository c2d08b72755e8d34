#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skiff/dataset.hpp"
#include "skiff/net.hpp"
#include "skiff/partition.hpp"
#include "skiff/process.hpp"

namespace skiff {

/// Synthetic local deployment: a pooled blob dataset partitioned across N
/// client directories plus a leader-held validation split. Used by the `run`
/// and `faultlab` subcommands and by the integration tests.
struct DeploymentSpec {
    int clients = 4;
    size_t samples = 2000;
    size_t dim = 16;
    int classes = 10;
    double separation = 6.0;
    std::string scheme = "iid";  // iid | label_skew | dirichlet
    int delta = 3;
    double alpha = 0.5;
    uint64_t seed = 1;
    std::string dataset_name = "blobs";
    double val_fraction = 0.2;
    double heartbeat_interval_s = 5.0;
    double compute_delay_factor = 0;
    std::vector<double> benchmark_presets;  // optional, one per client
    std::vector<double> delay_factors;      // optional, one per client
    bool wipe_after_round = false;
};

struct LocalDeployment {
    std::filesystem::path root;
    std::string dataset_name;
    std::vector<std::string> client_ids;
    std::vector<std::filesystem::path> client_config_paths;
    std::filesystem::path leader_data_dir;
    Dataset pooled_train;  // union of the client shards (oracle input)
    Dataset validation;
    PartitionPlan plan;
};

/// Writes client data directories + config YAMLs and the leader validation
/// split under `root`. Broker endpoint is stamped into the client configs.
LocalDeployment prepare_deployment(const std::filesystem::path& root, const DeploymentSpec& spec,
                                   const Endpoint& broker);

/// Spawns `skiff client --config <yaml>` for every prepared client.
std::vector<ProcessHandle> spawn_client_processes(const LocalDeployment& dep,
                                                  const std::filesystem::path& skiff_binary);

/// Client config YAML content (also used for single-client setups).
std::string client_config_yaml(const std::string& client_id, const std::filesystem::path& data_dir,
                               const std::filesystem::path& cache_dir, const Endpoint& broker,
                               double heartbeat_interval_s, bool wipe_after_round,
                               std::optional<double> benchmark_preset, double compute_delay_factor);

}  // namespace skiff
