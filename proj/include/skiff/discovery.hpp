#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "skiff/net.hpp"
#include "skiff/state.hpp"
#include "skiff/state_views.hpp"
#include "skiff/value.hpp"

namespace skiff {

// Topics used for discovery.
namespace topic {
inline constexpr const char* kAdvert = "client/advert";
inline constexpr const char* kHeartbeat = "client/heartbeat";
}  // namespace topic

/// Minimal publish-subscribe broker over TCP. Control frames are
/// newline-delimited UTF-8 JSON:
///   {"op":"sub","topic":"client/advert"}
///   {"op":"pub","topic":"client/advert","payload":"<base64>"}
/// Deliveries to subscribers: {"topic":...,"payload":"<base64>"}.
/// At-most-once, no retained messages, no auth.
class Broker {
public:
    Broker() = default;
    ~Broker();

    Endpoint start(const Endpoint& bind);
    void stop();

    size_t delivered_count() const { return delivered_.load(); }

private:
    void accept_loop();
    void serve_connection(int fd);

    int listen_fd_ = -1;
    std::atomic<bool> running_{false};
    std::atomic<size_t> delivered_{0};
    std::thread accept_thread_;
    std::mutex mu_;
    std::map<std::string, std::vector<int>> subscribers_;  // topic -> fds
    std::vector<std::thread> conn_threads_;
};

/// Client connection to the broker. Publishing reconnects with backoff when
/// the broker drops; subscriptions are re-established on reconnect.
class BrokerClient {
public:
    using Handler = std::function<void(const std::string& topic, const std::vector<uint8_t>& payload)>;

    explicit BrokerClient(Endpoint broker);
    ~BrokerClient();

    bool publish(const std::string& topic, std::span<const uint8_t> payload);
    void subscribe(const std::string& topic, Handler handler);
    void start();  // spins the receive loop (needed for subscriptions)
    void stop();
    bool connected() const { return fd_.load() >= 0; }

private:
    bool ensure_connected();
    void recv_loop();

    Endpoint broker_;
    std::atomic<int> fd_{-1};
    std::mutex write_mu_;
    std::mutex sub_mu_;
    std::map<std::string, Handler> handlers_;
    std::atomic<bool> running_{false};
    std::thread recv_thread_;
};

struct Advertisement {
    std::string client_id;
    Endpoint rpc_endpoint;
    ValueMap hardware_information;
    std::string dataset;
    std::map<std::string, int64_t> label_counts;
    std::optional<double> benchmark_s;
    double heartbeat_interval_s = 5.0;

    nlohmann::json to_json() const;
    static Advertisement from_json(const nlohmann::json& j);  // throws MalformedFrame
};

struct Heartbeat {
    std::string client_id;
    double timestamp = 0;

    nlohmann::json to_json() const;
    static Heartbeat from_json(const nlohmann::json& j);
};

/// Leader-side subscriber maintaining the Client Info state: inserts clients
/// on adverts, refreshes liveness on heartbeats, and sweeps for clients that
/// missed too many heartbeats. Mutates only the liveness-related fields
/// concurrently with session reads.
class DiscoveryService {
public:
    DiscoveryService(StateHandle client_info_rw, int miss_threshold = 5, double sweep_period_s = 1.0);
    ~DiscoveryService();

    void attach(BrokerClient& bus);  // subscribes to advert/heartbeat topics
    void start_sweeper();
    void stop();

    void handle_advert(const Advertisement& ad);
    void handle_heartbeat(const Heartbeat& hb);
    /// Marks clients silent for more than miss_threshold * interval as
    /// inactive; returns the ids newly marked inactive.
    std::vector<std::string> liveness_sweep(double now);

    std::vector<std::string> active_clients() const;
    size_t known_clients() const;
    bool wait_for_clients(size_t n, double timeout_s);

    int miss_threshold() const { return miss_threshold_; }

private:
    mutable std::mutex mu_;
    ClientInfoView info_;
    int miss_threshold_;
    double sweep_period_s_;
    std::atomic<bool> running_{false};
    std::thread sweep_thread_;
};

}  // namespace skiff
