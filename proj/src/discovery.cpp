#include "skiff/discovery.hpp"

#include <chrono>

#include <nlohmann/json.hpp>

#include "skiff/errors.hpp"
#include "skiff/log.hpp"

namespace skiff {

using nlohmann::json;

json Advertisement::to_json() const {
    json j;
    j["client_id"] = client_id;
    j["rpc_endpoint"] = rpc_endpoint.str();
    j["hardware_information"] = Value(hardware_information).to_json();
    json dd;
    dd["dataset"] = dataset;
    dd["label_counts"] = label_counts;
    j["dataset_details"] = dd;
    if (benchmark_s)
        j["benchmark"] = *benchmark_s;
    else
        j["benchmark"] = nullptr;
    j["heartbeat_interval"] = heartbeat_interval_s;
    return j;
}

Advertisement Advertisement::from_json(const json& j) {
    try {
        Advertisement ad;
        ad.client_id = j.at("client_id").get<std::string>();
        if (ad.client_id.empty()) throw MalformedFrame("empty client_id");
        ad.rpc_endpoint = Endpoint::parse(j.at("rpc_endpoint").get<std::string>());
        if (j.contains("hardware_information") && j["hardware_information"].is_object())
            ad.hardware_information = Value::from_json(j["hardware_information"]).as_map();
        if (j.contains("dataset_details")) {
            const auto& dd = j["dataset_details"];
            ad.dataset = dd.value("dataset", "");
            if (dd.contains("label_counts"))
                for (auto it = dd["label_counts"].begin(); it != dd["label_counts"].end(); ++it)
                    ad.label_counts[it.key()] = it.value().get<int64_t>();
        }
        if (j.contains("benchmark") && j["benchmark"].is_number())
            ad.benchmark_s = j["benchmark"].get<double>();
        ad.heartbeat_interval_s = j.value("heartbeat_interval", 5.0);
        return ad;
    } catch (const json::exception& e) {
        throw MalformedFrame(std::string("malformed advertisement: ") + e.what());
    }
}

json Heartbeat::to_json() const {
    return json{{"client_id", client_id}, {"timestamp", timestamp}};
}

Heartbeat Heartbeat::from_json(const json& j) {
    try {
        Heartbeat hb;
        hb.client_id = j.at("client_id").get<std::string>();
        hb.timestamp = j.at("timestamp").get<double>();
        return hb;
    } catch (const json::exception& e) {
        throw MalformedFrame(std::string("malformed heartbeat: ") + e.what());
    }
}

DiscoveryService::DiscoveryService(StateHandle client_info_rw, int miss_threshold,
                                   double sweep_period_s)
    : info_(std::move(client_info_rw)), miss_threshold_(miss_threshold),
      sweep_period_s_(sweep_period_s) {}

DiscoveryService::~DiscoveryService() { stop(); }

void DiscoveryService::attach(BrokerClient& bus) {
    bus.subscribe(topic::kAdvert, [this](const std::string&, const std::vector<uint8_t>& payload) {
        try {
            auto ad = Advertisement::from_json(json::parse(payload.begin(), payload.end()));
            handle_advert(ad);
        } catch (const std::exception& e) {
            log_kv("discovery", "advert_dropped", {{"error", e.what()}});
        }
    });
    bus.subscribe(topic::kHeartbeat, [this](const std::string&, const std::vector<uint8_t>& payload) {
        try {
            auto hb = Heartbeat::from_json(json::parse(payload.begin(), payload.end()));
            handle_heartbeat(hb);
        } catch (const std::exception& e) {
            log_kv("discovery", "heartbeat_dropped", {{"error", e.what()}});
        }
    });
}

void DiscoveryService::start_sweeper() {
    if (running_.exchange(true)) return;
    sweep_thread_ = std::thread([this] {
        while (running_) {
            liveness_sweep(wallclock_s());
            auto until = std::chrono::steady_clock::now() +
                         std::chrono::milliseconds(static_cast<int>(sweep_period_s_ * 1000));
            while (running_ && std::chrono::steady_clock::now() < until)
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    });
}

void DiscoveryService::stop() {
    if (!running_.exchange(false)) return;
    if (sweep_thread_.joinable()) sweep_thread_.join();
}

void DiscoveryService::handle_advert(const Advertisement& ad) {
    std::lock_guard lk(mu_);
    double now = wallclock_s();
    bool fresh = !info_.known(ad.client_id);
    if (fresh) {
        info_.set_join_timestamp(ad.client_id, now);
        info_.set_training(ad.client_id, false);
        info_.clear_failed_rounds(ad.client_id);
        log_kv("discovery", "client_joined", {{"client", ad.client_id}, {"endpoint", ad.rpc_endpoint.str()}});
    }
    info_.set_rpc_endpoint(ad.client_id, ad.rpc_endpoint.str());
    info_.set_hardware(ad.client_id, ad.hardware_information);
    ValueMap details;
    details["dataset"] = Value(ad.dataset);
    ValueMap counts;
    for (const auto& [label, count] : ad.label_counts) counts[label] = Value(count);
    details["label_counts"] = Value(std::move(counts));
    info_.set_dataset_details(ad.client_id, std::move(details));
    info_.set_heartbeat_interval(ad.client_id, ad.heartbeat_interval_s);
    if (ad.benchmark_s) info_.set_benchmark(ad.client_id, *ad.benchmark_s);
    info_.set_heartbeat_timestamp(ad.client_id, now);
    info_.set_active(ad.client_id, true);
}

void DiscoveryService::handle_heartbeat(const Heartbeat& hb) {
    std::lock_guard lk(mu_);
    if (!info_.known(hb.client_id)) {
        log_kv("discovery", "heartbeat_unknown_client", {{"client", hb.client_id}});
        return;
    }
    info_.set_heartbeat_timestamp(hb.client_id, wallclock_s());
    info_.append_heartbeat_history(hb.client_id, hb.timestamp);
    if (!info_.is_active(hb.client_id)) {
        info_.set_active(hb.client_id, true);
        log_kv("discovery", "client_reinstated", {{"client", hb.client_id}});
    }
}

std::vector<std::string> DiscoveryService::liveness_sweep(double now) {
    std::lock_guard lk(mu_);
    std::vector<std::string> newly_inactive;
    for (const auto& id : info_.client_ids()) {
        if (!info_.is_active(id)) continue;
        double interval = info_.heartbeat_interval(id);
        double silence = now - info_.heartbeat_timestamp(id);
        if (silence > static_cast<double>(miss_threshold_) * interval) {
            info_.set_active(id, false);
            newly_inactive.push_back(id);
            log_kv("discovery", "client_inactive",
                   {{"client", id}, {"silence_s", fmt_double(silence)}, {"detected_at", fmt_double(now)}});
        }
    }
    return newly_inactive;
}

std::vector<std::string> DiscoveryService::active_clients() const {
    std::lock_guard lk(mu_);
    std::vector<std::string> out;
    for (const auto& id : info_.client_ids())
        if (info_.is_active(id)) out.push_back(id);
    return out;
}

size_t DiscoveryService::known_clients() const {
    std::lock_guard lk(mu_);
    return info_.client_ids().size();
}

bool DiscoveryService::wait_for_clients(size_t n, double timeout_s) {
    double deadline = mono_s() + timeout_s;
    while (mono_s() < deadline) {
        if (active_clients().size() >= n) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    return active_clients().size() >= n;
}

}  // namespace skiff
