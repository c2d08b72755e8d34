#pragma once

// Real-stack in-process cluster: a broker, N client agents (each with its own
// RPC server and data directory), leader-side discovery and TCP transport.
// Fast enough for convergence runs while exercising the full wire path.

#include <memory>
#include <vector>

#include "skiff/client_agent.hpp"
#include "skiff/deployment.hpp"
#include "skiff/discovery.hpp"
#include "skiff/session.hpp"

#include "test_util.hpp"

namespace skiff::test {

struct LocalCluster {
    TempDir tmp;
    Broker broker;
    Endpoint broker_ep;
    LocalDeployment dep;
    std::vector<std::unique_ptr<ClientAgent>> agents;
    SessionStates states;
    std::unique_ptr<BrokerClient> bus;
    std::unique_ptr<DiscoveryService> discovery;
    TcpTransport transport;

    explicit LocalCluster(const DeploymentSpec& spec, int miss_threshold = 5) {
        broker_ep = broker.start(Endpoint{"127.0.0.1", 0});
        dep = prepare_deployment(tmp / "deployment", spec, broker_ep);
        for (const auto& cfg_path : dep.client_config_paths) {
            auto cfg = ClientConfig::from_yaml_file(cfg_path);
            agents.push_back(std::make_unique<ClientAgent>(cfg));
            agents.back()->start();
        }
        states = make_memory_states();
        bus = std::make_unique<BrokerClient>(broker_ep);
        discovery = std::make_unique<DiscoveryService>(StateHandle::rw(states.client_info),
                                                       miss_threshold);
        discovery->attach(*bus);
        bus->start();
        discovery->start_sweeper();
        discovery->wait_for_clients(dep.client_ids.size(), 20);
    }

    ~LocalCluster() {
        transport.shutdown();
        if (discovery) discovery->stop();
        if (bus) bus->stop();
        for (auto& a : agents) a->stop();
        broker.stop();
    }

    SessionConfig base_config(const std::string& sid, const std::string& strategy) const {
        SessionConfig cfg;
        cfg.session_id = sid;
        cfg.aggregator = strategy;
        cfg.client_selection = strategy;
        cfg.model_id = "logreg";
        cfg.dataset = dep.dataset_name;
        cfg.model_args["family"] = Value("logreg");
        cfg.model_args["input_dim"] = Value(static_cast<int64_t>(dep.pooled_train.cols));
        cfg.model_args["num_classes"] = Value(static_cast<int64_t>(dep.pooled_train.num_labels));
        cfg.validation_dataset = dep.dataset_name;
        cfg.data_dir = (dep.root / "leader_data").string();
        cfg.skip_benchmark = true;
        cfg.seed = 7;
        return cfg;
    }

    SessionResult run_session(const SessionConfig& cfg, SessionOptions opts = {},
                              SessionManager** out_manager = nullptr,
                              bool resume = false) {
        if (opts.metrics_path.empty()) opts.metrics_path = tmp / (cfg.session_id + ".metrics.jsonl");
        opts.min_clients = dep.client_ids.size();
        SessionManager manager(cfg, states, transport, *discovery, opts);
        if (out_manager) *out_manager = &manager;
        SessionResult result = resume ? manager.resume() : manager.run();
        if (out_manager) *out_manager = nullptr;
        return result;
    }
};

}  // namespace skiff::test
