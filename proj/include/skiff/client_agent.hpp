#pragma once

#include <atomic>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "skiff/discovery.hpp"
#include "skiff/net.hpp"
#include "skiff/package.hpp"
#include "skiff/transport.hpp"

namespace skiff {

struct ClientConfig {
    std::string client_id;
    std::filesystem::path data_dir;
    double heartbeat_interval_s = 5.0;
    Endpoint broker;
    Endpoint rpc_listen;  // port 0: ephemeral
    bool wipe_after_round = false;
    std::filesystem::path cache_dir;
    std::optional<double> benchmark_preset_s;  // advertised instead of measuring
    double compute_delay_factor = 0;  // extra seconds of sleep per trained mini-batch
    ValueMap hardware_information;

    static ClientConfig from_yaml_file(const std::filesystem::path& path);  // env overrides applied
};

/// Stateless client runtime. Holds no session state between requests: the
/// only persistent artifacts are the package cache and a cached benchmark
/// result. Heartbeats run on their own thread so a busy trainer cannot be
/// mistaken for a dead client. One training request is served at a time; a
/// concurrent second request is rejected with Busy.
class ClientAgent {
public:
    explicit ClientAgent(ClientConfig cfg);
    ~ClientAgent();

    void start();
    void stop();

    Endpoint rpc_endpoint() const { return rpc_endpoint_; }
    const ClientConfig& config() const { return cfg_; }

    // RPC entry points (also used directly by unit tests)
    TrainResponse handle_train(const TrainRequest& req);
    std::optional<ModelPackage> cache_lookup(const std::string& sha256) const;
    double run_benchmark(const std::string& package_sha256, int minibatches);  // seconds

    void publish_advert();

private:
    RpcServer::Reply dispatch(const nlohmann::json& header, const std::vector<uint8_t>& payload);
    void heartbeat_loop();
    ModelPackage resolve_package(const TrainRequest& req);
    Dataset load_local_dataset(const std::string& dataset, const std::string& split);

    ClientConfig cfg_;
    PackageCache cache_;
    RpcServer server_;
    Endpoint rpc_endpoint_;
    std::unique_ptr<BrokerClient> bus_;
    std::thread heartbeat_thread_;
    std::atomic<bool> running_{false};
    std::mutex train_mu_;  // one training request at a time
    mutable std::mutex bench_mu_;
    std::optional<double> benchmark_s_;
};

}  // namespace skiff
