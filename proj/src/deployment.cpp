#include "skiff/deployment.hpp"

#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "skiff/errors.hpp"

namespace skiff {

std::string client_config_yaml(const std::string& client_id, const std::filesystem::path& data_dir,
                               const std::filesystem::path& cache_dir, const Endpoint& broker,
                               double heartbeat_interval_s, bool wipe_after_round,
                               std::optional<double> benchmark_preset, double compute_delay_factor) {
    std::ostringstream os;
    os << "client_id: " << client_id << "\n";
    os << "data_dir: " << data_dir.string() << "\n";
    os << "cache_dir: " << cache_dir.string() << "\n";
    os << "broker: " << broker.str() << "\n";
    os << "rpc_listen: 127.0.0.1:0\n";
    os << "heartbeat_interval: " << heartbeat_interval_s << "\n";
    os << "wipe_after_round: " << (wipe_after_round ? "true" : "false") << "\n";
    if (benchmark_preset) os << "benchmark: " << *benchmark_preset << "\n";
    if (compute_delay_factor > 0) os << "compute_delay_factor: " << compute_delay_factor << "\n";
    return os.str();
}

LocalDeployment prepare_deployment(const std::filesystem::path& root, const DeploymentSpec& spec,
                                   const Endpoint& broker) {
    if (spec.clients < 1) throw Error("deployment needs at least one client");
    std::filesystem::create_directories(root);

    LocalDeployment dep;
    dep.root = root;
    dep.dataset_name = spec.dataset_name;

    // one pooled dataset; a held-out tail becomes the leader validation split
    size_t val_rows = std::max<size_t>(static_cast<size_t>(static_cast<double>(spec.samples) *
                                                           spec.val_fraction),
                                       static_cast<size_t>(spec.classes));
    Dataset all = make_blobs(spec.samples + val_rows, spec.dim, spec.classes, spec.separation, spec.seed);
    std::vector<uint32_t> head(spec.samples), tail(val_rows);
    std::iota(head.begin(), head.end(), 0);
    std::iota(tail.begin(), tail.end(), static_cast<uint32_t>(spec.samples));
    dep.pooled_train = take_subset(all, head);
    dep.validation = take_subset(all, tail);

    if (spec.scheme == "iid") {
        dep.plan = partition_iid(dep.pooled_train, spec.clients, spec.seed + 1);
    } else if (spec.scheme == "label_skew") {
        dep.plan = partition_label_skew(dep.pooled_train, spec.clients, spec.delta, spec.seed + 1);
    } else if (spec.scheme == "dirichlet") {
        dep.plan = partition_dirichlet(dep.pooled_train, spec.clients, spec.alpha, spec.seed + 1);
    } else {
        throw Error("unknown partition scheme '" + spec.scheme + "'");
    }

    dep.leader_data_dir = root / "leader_data";
    save_dataset(dep.validation, dep.leader_data_dir / spec.dataset_name, "validation");

    for (int c = 0; c < spec.clients; ++c) {
        std::string cid = "c" + std::string(c < 10 ? "00" : (c < 100 ? "0" : "")) + std::to_string(c);
        std::filesystem::path cdir = root / "clients" / cid;
        std::filesystem::path data_dir = cdir / "data";
        Dataset shard = take_subset(dep.pooled_train, dep.plan.assignment[c]);
        save_dataset(shard, data_dir / spec.dataset_name, "train");
        // a small local validation split (clients validate on their own data)
        size_t n_val = std::max<size_t>(1, shard.rows / 5);
        std::vector<uint32_t> vidx(n_val);
        std::iota(vidx.begin(), vidx.end(), 0);
        save_dataset(take_subset(shard, vidx), data_dir / spec.dataset_name, "validation");

        std::optional<double> bench;
        if (!spec.benchmark_presets.empty())
            bench = spec.benchmark_presets[static_cast<size_t>(c) % spec.benchmark_presets.size()];
        double delay = spec.compute_delay_factor;
        if (!spec.delay_factors.empty())
            delay = spec.delay_factors[static_cast<size_t>(c) % spec.delay_factors.size()];

        std::filesystem::path cfg_path = cdir / "config.yaml";
        std::ofstream out(cfg_path, std::ios::trunc);
        out << client_config_yaml(cid, data_dir, cdir / "cache", broker, spec.heartbeat_interval_s,
                                  spec.wipe_after_round, bench, delay);
        if (!out) throw IoFailure("cannot write " + cfg_path.string());

        dep.client_ids.push_back(cid);
        dep.client_config_paths.push_back(cfg_path);
    }
    return dep;
}

std::vector<ProcessHandle> spawn_client_processes(const LocalDeployment& dep,
                                                  const std::filesystem::path& skiff_binary) {
    std::vector<ProcessHandle> procs;
    procs.reserve(dep.client_ids.size());
    for (size_t i = 0; i < dep.client_ids.size(); ++i) {
        std::filesystem::path log = dep.root / "clients" / dep.client_ids[i] / "client.log";
        procs.push_back(ProcessHandle::spawn(
            {skiff_binary.string(), "client", "--config", dep.client_config_paths[i].string()}, log));
    }
    return procs;
}

}  // namespace skiff
