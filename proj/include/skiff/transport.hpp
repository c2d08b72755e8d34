#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "skiff/engine.hpp"
#include "skiff/net.hpp"
#include "skiff/package.hpp"
#include "skiff/value.hpp"
#include "skiff/weights.hpp"

namespace skiff {

struct TrainRequest {
    std::string session_id;
    int64_t round_number = 0;
    std::string package_sha256;
    std::optional<ModelPackage> inline_package;  // sent iff the leader expects a cache miss
    ModelWeights global_model;
    Hyperparameters hyperparameters;
    double deadline_s = 0;  // > 0 always; enforced by the sender
    bool validate_only = false;
};

struct TrainResponse {
    std::string session_id;
    int64_t round_number = 0;
    std::string client_id;
    std::optional<ModelWeights> local_model;  // absent for validate_only or errors
    ValueMap training_metrics;
    ValueMap validation_metrics;
    std::string status = "ok";  // "ok" | "error"
    std::string error;
};

nlohmann::json train_request_header(const TrainRequest& req);
TrainRequest parse_train_request(const nlohmann::json& header, std::span<const uint8_t> payload);
nlohmann::json train_response_header(const TrainResponse& resp);
TrainResponse parse_train_response(const nlohmann::json& header, std::span<const uint8_t> payload);

enum class FailureReason { ConnectFailed, ConnectionLost, DeadlineExceeded, Rejected };
const char* to_string(FailureReason r);

struct CompletionEvent {
    bool ok = false;
    TrainResponse response;      // valid when ok
    FailureReason reason = FailureReason::ConnectionLost;
    std::string detail;
};

/// Leader-side RPC surface. Every send_* invokes its callback exactly once,
/// from a transport thread, with either the response or a failure; callers
/// must not block in callbacks beyond enqueueing.
class Transport {
public:
    virtual ~Transport() = default;

    virtual void send_train_request(const Endpoint& client, const TrainRequest& req,
                                    std::function<void(CompletionEvent)> on_complete) = 0;

    /// Digest probe first; file bytes cross the wire only on a cache miss.
    /// On digest mismatch at the client the package is retransmitted once.
    /// cb(ok, cached, error).
    virtual void deliver_package(const Endpoint& client, const ModelPackage& pkg,
                                 std::function<void(bool ok, bool cached, std::string error)> cb) = 0;

    /// cb(ok, seconds, failure reason when !ok).
    virtual void send_benchmark_request(const Endpoint& client, const std::string& package_sha256,
                                        int minibatches, double deadline_s,
                                        std::function<void(bool ok, double seconds, std::string error)> cb) = 0;
};

/// Framed RPC over a per-request TCP connection: 4-byte big-endian length
/// prefix, UTF-8 JSON header, then the raw weight payload announced by the
/// header. One thread per in-flight request. A request whose response does
/// not arrive before its deadline completes as DeadlineExceeded and the
/// connection is closed; a late response is discarded with the socket.
class TcpTransport : public Transport {
public:
    explicit TcpTransport(int connect_timeout_ms = 3000);
    ~TcpTransport() override;

    void send_train_request(const Endpoint& client, const TrainRequest& req,
                            std::function<void(CompletionEvent)> on_complete) override;
    void deliver_package(const Endpoint& client, const ModelPackage& pkg,
                         std::function<void(bool, bool, std::string)> cb) override;
    void send_benchmark_request(const Endpoint& client, const std::string& package_sha256,
                                int minibatches, double deadline_s,
                                std::function<void(bool, double, std::string)> cb) override;

    void shutdown();  // joins all in-flight request threads

private:
    void launch(std::function<void()> fn);
    void reap_finished();

    int connect_timeout_ms_;
    std::mutex mu_;
    std::vector<std::thread> threads_;
    std::vector<std::thread::id> finished_;
    std::atomic<bool> shutdown_{false};
};

/// Client-side server for the same framing. Each accepted connection carries
/// one request; the handler's response is written back and the connection
/// closed.
class RpcServer {
public:
    struct Reply {
        nlohmann::json header;
        std::vector<uint8_t> payload;
    };
    using Handler = std::function<Reply(const nlohmann::json& header, const std::vector<uint8_t>& payload)>;

    RpcServer() = default;
    ~RpcServer();

    Endpoint start(const Endpoint& bind, Handler handler);
    void stop();
    Endpoint endpoint() const { return endpoint_; }

private:
    void accept_loop();

    int listen_fd_ = -1;
    Endpoint endpoint_;
    Handler handler_;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex mu_;
    std::vector<std::thread> conn_threads_;
    std::vector<std::thread::id> finished_;
};

}  // namespace skiff
