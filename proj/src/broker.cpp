#include <algorithm>
#include <chrono>
#include <thread>

#include <sys/socket.h>

#include <nlohmann/json.hpp>

#include "skiff/codec.hpp"
#include "skiff/discovery.hpp"
#include "skiff/errors.hpp"
#include "skiff/log.hpp"

namespace skiff {

using nlohmann::json;

Broker::~Broker() { stop(); }

Endpoint Broker::start(const Endpoint& bind) {
    Endpoint actual;
    listen_fd_ = tcp_listen(bind, &actual);
    if (listen_fd_ < 0) throw IoFailure("broker cannot listen on " + bind.str());
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    log_kv("broker", "started", {{"endpoint", actual.str()}});
    return actual;
}

void Broker::stop() {
    if (!running_.exchange(false)) return;
    close_fd(listen_fd_);
    listen_fd_ = -1;
    if (accept_thread_.joinable()) accept_thread_.join();
    for (auto& t : conn_threads_)
        if (t.joinable()) t.join();
    conn_threads_.clear();
    std::lock_guard lk(mu_);
    subscribers_.clear();
}

void Broker::accept_loop() {
    while (running_) {
        int fd = tcp_accept(listen_fd_, 200);
        if (fd < 0) continue;
        std::lock_guard lk(mu_);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void Broker::serve_connection(int fd) {
    std::string carry;
    std::vector<std::string> my_topics;
    while (running_) {
        std::optional<std::string> line;
        try {
            line = read_line(fd, carry, 200);
        } catch (const MalformedFrame&) {
            break;
        }
        if (!line) {
            if (!carry.empty() || !running_) break;
            // poll timeout with no pending data: check peer still there by
            // continuing; read_line returns nullopt on both timeout and EOF,
            // so distinguish via a zero-byte peek
            char c;
            ssize_t r = ::recv(fd, &c, 1, MSG_PEEK | MSG_DONTWAIT);
            if (r == 0) break;
            continue;
        }
        json j;
        try {
            j = json::parse(*line);
        } catch (const json::exception&) {
            log_kv("broker", "bad_frame_dropped");
            continue;
        }
        std::string op = j.value("op", "");
        std::string topic = j.value("topic", "");
        if (op == "sub") {
            std::lock_guard lk(mu_);
            auto& subs = subscribers_[topic];
            if (std::find(subs.begin(), subs.end(), fd) == subs.end()) subs.push_back(fd);
            my_topics.push_back(topic);
        } else if (op == "pub") {
            std::vector<int> targets;
            {
                std::lock_guard lk(mu_);
                auto it = subscribers_.find(topic);
                if (it != subscribers_.end()) targets = it->second;
            }
            json delivery;
            delivery["topic"] = topic;
            delivery["payload"] = j.value("payload", "");
            std::vector<int> dead;
            for (int t : targets) {
                if (t == fd) continue;  // no echo to the publisher
                if (write_json_line(t, delivery))
                    delivered_.fetch_add(1);
                else
                    dead.push_back(t);
            }
            if (!dead.empty()) {
                std::lock_guard lk(mu_);
                auto& subs = subscribers_[topic];
                for (int d : dead) std::erase(subs, d);
            }
        }
    }
    {
        std::lock_guard lk(mu_);
        for (const auto& t : my_topics) std::erase(subscribers_[t], fd);
    }
    close_fd(fd);
}

BrokerClient::BrokerClient(Endpoint broker) : broker_(std::move(broker)) {}

BrokerClient::~BrokerClient() { stop(); }

bool BrokerClient::ensure_connected() {
    if (fd_.load() >= 0) return true;
    for (int backoff_ms : {0, 100, 200, 400}) {
        if (backoff_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
        int fd = tcp_connect(broker_, 1000);
        if (fd >= 0) {
            fd_.store(fd);
            // re-establish subscriptions on the fresh connection
            std::lock_guard lk(sub_mu_);
            for (const auto& [topic, _] : handlers_) {
                json j{{"op", "sub"}, {"topic", topic}};
                write_json_line(fd, j);
            }
            return true;
        }
    }
    return false;
}

bool BrokerClient::publish(const std::string& topic, std::span<const uint8_t> payload) {
    json j{{"op", "pub"}, {"topic", topic}, {"payload", base64_encode(payload)}};
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (!ensure_connected()) return false;
        std::lock_guard lk(write_mu_);
        int fd = fd_.load();
        if (fd >= 0 && write_json_line(fd, j)) return true;
        close_fd(fd_.exchange(-1));
    }
    return false;
}

void BrokerClient::subscribe(const std::string& topic, Handler handler) {
    {
        std::lock_guard lk(sub_mu_);
        handlers_[topic] = std::move(handler);
    }
    if (fd_.load() >= 0) {
        // already connected: register just this topic
        std::lock_guard lk(write_mu_);
        int fd = fd_.load();
        if (fd >= 0) {
            json j{{"op", "sub"}, {"topic", topic}};
            if (!write_json_line(fd, j)) close_fd(fd_.exchange(-1));
        }
    } else {
        ensure_connected();  // syncs every registered subscription
    }
}

void BrokerClient::start() {
    if (running_.exchange(true)) return;
    recv_thread_ = std::thread([this] { recv_loop(); });
}

void BrokerClient::stop() {
    if (!running_.exchange(false)) {
        close_fd(fd_.exchange(-1));
        return;
    }
    close_fd(fd_.exchange(-1));
    if (recv_thread_.joinable()) recv_thread_.join();
}

void BrokerClient::recv_loop() {
    std::string carry;
    while (running_) {
        if (fd_.load() < 0) {
            carry.clear();
            if (!ensure_connected()) {
                std::this_thread::sleep_for(std::chrono::milliseconds(500));
                continue;
            }
        }
        std::optional<std::string> line;
        try {
            line = read_line(fd_.load(), carry, 200);
        } catch (const MalformedFrame&) {
            close_fd(fd_.exchange(-1));
            continue;
        }
        if (!line) {
            int fd = fd_.load();
            if (fd < 0) continue;
            char c;
            ssize_t r = ::recv(fd, &c, 1, MSG_PEEK | MSG_DONTWAIT);
            if (r == 0) close_fd(fd_.exchange(-1));  // broker went away; reconnect
            continue;
        }
        try {
            json j = json::parse(*line);
            std::string topic = j.value("topic", "");
            auto payload = base64_decode(j.value("payload", ""));
            Handler h;
            {
                std::lock_guard lk(sub_mu_);
                auto it = handlers_.find(topic);
                if (it != handlers_.end()) h = it->second;
            }
            if (h) h(topic, payload);
        } catch (const std::exception& e) {
            log_kv("broker_client", "bad_delivery", {{"error", e.what()}});
        }
    }
}

}  // namespace skiff
