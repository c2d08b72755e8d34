#pragma once

// Scripted in-process transport for lifecycle and sequencing tests: the test
// decides when each "client" answers and with what. Callbacks fire from a
// worker thread, mirroring the real transport's threading.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "skiff/transport.hpp"

namespace skiff::test {

class MockTransport : public Transport {
public:
    using Responder = std::function<TrainResponse(const std::string& cid, const TrainRequest&)>;

    struct Behavior {
        bool manual = false;  // hold responses until release()
        bool fail = false;
        FailureReason reason = FailureReason::ConnectionLost;
        double benchmark_s = 1.0;
    };

    explicit MockTransport(Responder responder) : responder_(std::move(responder)) {
        worker_ = std::thread([this] { run(); });
    }
    ~MockTransport() override {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
            cv_.notify_all();
        }
        worker_.join();
    }

    void set_behavior(const std::string& cid, Behavior b) {
        std::lock_guard lk(mu_);
        behavior_[cid] = b;
    }
    void map_endpoint(const Endpoint& ep, const std::string& cid) {
        std::lock_guard lk(mu_);
        by_endpoint_[ep.str()] = cid;
    }

    void send_train_request(const Endpoint& client, const TrainRequest& req,
                            std::function<void(CompletionEvent)> cb) override {
        std::lock_guard lk(mu_);
        std::string cid = by_endpoint_.at(client.str());
        Job job{cid, req, std::move(cb)};
        Behavior b = behavior_.count(cid) ? behavior_[cid] : Behavior{};
        if (b.manual)
            held_[cid].push_back(std::move(job));
        else
            ready_.push_back(std::move(job));
        cv_.notify_all();
    }

    void deliver_package(const Endpoint&, const ModelPackage&,
                         std::function<void(bool, bool, std::string)> cb) override {
        cb(true, false, "");
    }

    void send_benchmark_request(const Endpoint& client, const std::string&, int, double,
                                std::function<void(bool, double, std::string)> cb) override {
        double s = 1.0;
        {
            std::lock_guard lk(mu_);
            auto it = behavior_.find(by_endpoint_.at(client.str()));
            if (it != behavior_.end()) s = it->second.benchmark_s;
        }
        cb(true, s, "");
    }

    /// Releases one held request for the client (manual mode).
    bool release(const std::string& cid) {
        std::lock_guard lk(mu_);
        auto it = held_.find(cid);
        if (it == held_.end() || it->second.empty()) return false;
        ready_.push_back(std::move(it->second.front()));
        it->second.pop_front();
        cv_.notify_all();
        return true;
    }

    bool has_held(const std::string& cid) {
        std::lock_guard lk(mu_);
        auto it = held_.find(cid);
        return it != held_.end() && !it->second.empty();
    }

    std::vector<std::string> held_clients() {
        std::lock_guard lk(mu_);
        std::vector<std::string> out;
        for (const auto& [cid, jobs] : held_)
            if (!jobs.empty()) out.push_back(cid);
        return out;
    }

private:
    struct Job {
        std::string cid;
        TrainRequest req;
        std::function<void(CompletionEvent)> cb;
    };

    void run() {
        std::unique_lock lk(mu_);
        while (!stop_) {
            cv_.wait(lk, [&] { return stop_ || !ready_.empty(); });
            while (!ready_.empty()) {
                Job job = std::move(ready_.front());
                ready_.pop_front();
                Behavior b = behavior_.count(job.cid) ? behavior_[job.cid] : Behavior{};
                lk.unlock();
                CompletionEvent ev;
                if (b.fail) {
                    ev.ok = false;
                    ev.reason = b.reason;
                    ev.detail = "scripted failure";
                } else {
                    ev.ok = true;
                    ev.response = responder_(job.cid, job.req);
                }
                job.cb(std::move(ev));
                lk.lock();
            }
        }
    }

    Responder responder_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, std::string> by_endpoint_;
    std::map<std::string, Behavior> behavior_;
    std::map<std::string, std::deque<Job>> held_;
    std::deque<Job> ready_;
    bool stop_ = false;
    std::thread worker_;
};


}  // namespace skiff::test
