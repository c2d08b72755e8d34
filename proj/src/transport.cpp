#include "skiff/transport.hpp"

#include <chrono>

#include "skiff/errors.hpp"
#include "skiff/log.hpp"

namespace skiff {

using nlohmann::json;

namespace {

json hp_to_json(const Hyperparameters& hp) {
    return json{{"epochs", hp.epochs},
                {"batch_size", hp.batch_size},
                {"learning_rate", hp.learning_rate},
                {"optimizer", hp.optimizer},
                {"loss_function", hp.loss_function},
                {"seed", hp.seed}};
}

Hyperparameters hp_from_json(const json& j) {
    Hyperparameters hp;
    hp.epochs = j.value("epochs", int64_t{1});
    hp.batch_size = j.value("batch_size", int64_t{32});
    hp.learning_rate = j.value("learning_rate", 0.01);
    hp.optimizer = j.value("optimizer", "sgd");
    hp.loss_function = j.value("loss_function", "crossentropy");
    hp.seed = j.value("seed", uint64_t{0});
    return hp;
}

json metrics_to_json(const ValueMap& m) { return Value(m).to_json(); }

ValueMap metrics_from_json(const json& j) {
    if (!j.is_object()) return {};
    return Value::from_json(j).as_map();
}

int deadline_to_ms(double deadline_s) {
    if (deadline_s <= 0) return -1;
    double ms = deadline_s * 1000.0;
    return ms > 2e9 ? 2000000000 : static_cast<int>(ms);
}

}  // namespace

const char* to_string(FailureReason r) {
    switch (r) {
        case FailureReason::ConnectFailed: return "ConnectFailed";
        case FailureReason::ConnectionLost: return "ConnectionLost";
        case FailureReason::DeadlineExceeded: return "DeadlineExceeded";
        case FailureReason::Rejected: return "Rejected";
    }
    return "Unknown";
}

json train_request_header(const TrainRequest& req) {
    json h;
    h["op"] = "train";
    h["session_id"] = req.session_id;
    h["round_number"] = req.round_number;
    h["package_sha256"] = req.package_sha256;
    if (req.inline_package) h["package"] = req.inline_package->to_json();
    h["hyperparameters"] = hp_to_json(req.hyperparameters);
    h["deadline_s"] = req.deadline_s;
    h["validate_only"] = req.validate_only;
    return h;
}

TrainRequest parse_train_request(const json& header, std::span<const uint8_t> payload) {
    TrainRequest req;
    req.session_id = header.value("session_id", "");
    req.round_number = header.value("round_number", int64_t{0});
    req.package_sha256 = header.value("package_sha256", "");
    if (header.contains("package")) req.inline_package = ModelPackage::from_json(header["package"]);
    if (header.contains("hyperparameters")) req.hyperparameters = hp_from_json(header["hyperparameters"]);
    req.deadline_s = header.value("deadline_s", 0.0);
    req.validate_only = header.value("validate_only", false);
    req.global_model = deserialize_weights(payload);
    return req;
}

json train_response_header(const TrainResponse& resp) {
    json h;
    h["session_id"] = resp.session_id;
    h["round_number"] = resp.round_number;
    h["client_id"] = resp.client_id;
    h["training_metrics"] = metrics_to_json(resp.training_metrics);
    h["validation_metrics"] = metrics_to_json(resp.validation_metrics);
    h["status"] = resp.status;
    if (!resp.error.empty()) h["error"] = resp.error;
    h["has_model"] = resp.local_model.has_value();
    return h;
}

TrainResponse parse_train_response(const json& header, std::span<const uint8_t> payload) {
    TrainResponse resp;
    resp.session_id = header.value("session_id", "");
    resp.round_number = header.value("round_number", int64_t{0});
    resp.client_id = header.value("client_id", "");
    resp.training_metrics = metrics_from_json(header.value("training_metrics", json::object()));
    resp.validation_metrics = metrics_from_json(header.value("validation_metrics", json::object()));
    resp.status = header.value("status", "error");
    resp.error = header.value("error", "");
    if (header.value("has_model", false)) resp.local_model = deserialize_weights(payload);
    return resp;
}

TcpTransport::TcpTransport(int connect_timeout_ms) : connect_timeout_ms_(connect_timeout_ms) {}

TcpTransport::~TcpTransport() { shutdown(); }

void TcpTransport::shutdown() {
    shutdown_ = true;
    std::vector<std::thread> pending;
    {
        std::lock_guard lk(mu_);
        pending.swap(threads_);
    }
    for (auto& t : pending)
        if (t.joinable()) t.join();
}

void TcpTransport::launch(std::function<void()> fn) {
    {
        std::lock_guard lk(mu_);
        if (!shutdown_) {
            reap_finished();
            threads_.emplace_back([this, fn = std::move(fn)]() {
                fn();
                std::lock_guard lk2(mu_);
                finished_.push_back(std::this_thread::get_id());
            });
            return;
        }
    }
    fn();  // shutting down: complete synchronously so the callback still fires
}

// Joins threads whose bodies have completed (join returns immediately for
// them). Called with mu_ held.
void TcpTransport::reap_finished() {
    for (auto id : finished_) {
        for (auto it = threads_.begin(); it != threads_.end(); ++it) {
            if (it->get_id() == id) {
                it->join();
                threads_.erase(it);
                break;
            }
        }
    }
    finished_.clear();
}

void TcpTransport::send_train_request(const Endpoint& client, const TrainRequest& req,
                                      std::function<void(CompletionEvent)> on_complete) {
    auto payload = serialize_weights(req.global_model);
    json header = train_request_header(req);
    int deadline_ms = deadline_to_ms(req.deadline_s);
    int connect_ms = connect_timeout_ms_;
    launch([client, header = std::move(header), payload = std::move(payload), deadline_ms,
            connect_ms, cb = std::move(on_complete)]() mutable {
        CompletionEvent ev;
        int fd = tcp_connect(client, connect_ms);
        if (fd < 0) {
            ev.ok = false;
            ev.reason = FailureReason::ConnectFailed;
            ev.detail = "connect to " + client.str() + " failed";
            cb(std::move(ev));
            return;
        }
        if (!write_frame(fd, header, payload)) {
            close_fd(fd);
            ev.ok = false;
            ev.reason = FailureReason::ConnectionLost;
            ev.detail = "request write failed";
            cb(std::move(ev));
            return;
        }
        std::optional<Frame> frame;
        bool malformed = false;
        try {
            frame = read_frame(fd, deadline_ms);
        } catch (const MalformedFrame& e) {
            malformed = true;
            ev.detail = e.what();
        }
        // a timed-out request's late response dies with the socket
        close_fd(fd);
        if (!frame) {
            ev.ok = false;
            if (malformed) {
                ev.reason = FailureReason::ConnectionLost;
            } else if (deadline_ms >= 0) {
                ev.reason = FailureReason::DeadlineExceeded;
                ev.detail = "no response within deadline";
            } else {
                ev.reason = FailureReason::ConnectionLost;
                ev.detail = "connection lost";
            }
            cb(std::move(ev));
            return;
        }
        try {
            ev.response = parse_train_response(frame->header(), frame->payload);
        } catch (const std::exception& e) {
            ev.ok = false;
            ev.reason = FailureReason::ConnectionLost;
            ev.detail = std::string("bad response: ") + e.what();
            cb(std::move(ev));
            return;
        }
        ev.ok = true;
        cb(std::move(ev));
    });
}

void TcpTransport::deliver_package(const Endpoint& client, const ModelPackage& pkg,
                                   std::function<void(bool, bool, std::string)> cb) {
    int connect_ms = connect_timeout_ms_;
    launch([client, pkg, connect_ms, cb = std::move(cb)]() {
        std::string sha = pkg.sha256();
        auto round_trip = [&](const json& header,
                              std::span<const uint8_t> payload) -> std::optional<json> {
            int fd = tcp_connect(client, connect_ms);
            if (fd < 0) return std::nullopt;
            if (!write_frame(fd, header, payload)) {
                close_fd(fd);
                return std::nullopt;
            }
            std::optional<Frame> frame;
            try {
                frame = read_frame(fd, 30000);
            } catch (const MalformedFrame&) {
            }
            close_fd(fd);
            if (!frame) return std::nullopt;
            try {
                return frame->header();
            } catch (...) {
                return std::nullopt;
            }
        };

        json probe{{"op", "package_probe"}, {"sha256", sha}};
        auto probe_resp = round_trip(probe, {});
        if (!probe_resp) {
            cb(false, false, "package probe failed for " + client.str());
            return;
        }
        if (probe_resp->value("cached", false)) {
            cb(true, true, "");
            return;
        }
        json put{{"op", "package_put"}, {"sha256", sha}, {"package", pkg.to_json()}};
        for (int attempt = 0; attempt < 2; ++attempt) {  // one retransmit on digest mismatch
            auto put_resp = round_trip(put, {});
            if (!put_resp) {
                cb(false, false, "package delivery failed for " + client.str());
                return;
            }
            if (put_resp->value("status", "") == "ok") {
                cb(true, false, "");
                return;
            }
            std::string err = put_resp->value("error", "unknown");
            if (err != "digest_mismatch") {
                cb(false, false, err);
                return;
            }
            if (attempt == 1) {
                cb(false, false, "digest_mismatch");
                return;
            }
            log_kv("transport", "package_retransmit", {{"client", client.str()}, {"sha", sha}});
        }
    });
}

void TcpTransport::send_benchmark_request(const Endpoint& client, const std::string& package_sha256,
                                          int minibatches, double deadline_s,
                                          std::function<void(bool, double, std::string)> cb) {
    int connect_ms = connect_timeout_ms_;
    int deadline_ms = deadline_to_ms(deadline_s);
    launch([client, package_sha256, minibatches, deadline_ms, connect_ms, cb = std::move(cb)]() {
        json header{{"op", "benchmark"}, {"package_sha256", package_sha256}, {"minibatches", minibatches}};
        int fd = tcp_connect(client, connect_ms);
        if (fd < 0) {
            cb(false, 0, "connect failed");
            return;
        }
        if (!write_frame(fd, header, {})) {
            close_fd(fd);
            cb(false, 0, "write failed");
            return;
        }
        std::optional<Frame> frame;
        try {
            frame = read_frame(fd, deadline_ms);
        } catch (const MalformedFrame&) {
        }
        close_fd(fd);
        if (!frame) {
            cb(false, 0, "no benchmark response");
            return;
        }
        try {
            json h = frame->header();
            if (h.value("status", "") != "ok") {
                cb(false, 0, h.value("error", "benchmark error"));
                return;
            }
            cb(true, h.value("seconds", 0.0), "");
        } catch (const std::exception& e) {
            cb(false, 0, e.what());
        }
    });
}

RpcServer::~RpcServer() { stop(); }

Endpoint RpcServer::start(const Endpoint& bind, Handler handler) {
    handler_ = std::move(handler);
    listen_fd_ = tcp_listen(bind, &endpoint_);
    if (listen_fd_ < 0) throw IoFailure("rpc server cannot listen on " + bind.str());
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    return endpoint_;
}

void RpcServer::stop() {
    if (!running_.exchange(false)) return;
    close_fd(listen_fd_);
    listen_fd_ = -1;
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> pending;
    {
        std::lock_guard lk(mu_);
        pending.swap(conn_threads_);
    }
    for (auto& t : pending)
        if (t.joinable()) t.join();
}

void RpcServer::accept_loop() {
    while (running_) {
        int fd = tcp_accept(listen_fd_, 200);
        {
            // reap connection threads that have finished
            std::lock_guard lk(mu_);
            for (auto id : finished_) {
                for (auto it = conn_threads_.begin(); it != conn_threads_.end(); ++it) {
                    if (it->get_id() == id) {
                        it->join();
                        conn_threads_.erase(it);
                        break;
                    }
                }
            }
            finished_.clear();
        }
        if (fd < 0) continue;
        std::lock_guard lk(mu_);
        conn_threads_.emplace_back([this, fd] {
            std::optional<Frame> frame;
            try {
                frame = read_frame(fd, 60000);
            } catch (const MalformedFrame& e) {
                log_kv("rpc", "malformed_frame", {{"error", e.what()}});
            }
            if (frame) {
                Reply reply;
                try {
                    reply = handler_(frame->header(), frame->payload);
                } catch (const std::exception& e) {
                    reply.header = json{{"status", "error"}, {"error", e.what()}};
                    reply.payload.clear();
                }
                write_frame(fd, reply.header, reply.payload);
            }
            close_fd(fd);
            std::lock_guard lk2(mu_);
            finished_.push_back(std::this_thread::get_id());
        });
    }
}

}  // namespace skiff
