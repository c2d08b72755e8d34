#include "skiff/faultlab.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "skiff/errors.hpp"

namespace skiff {

FaultPlan FaultPlan::from_yaml_file(const std::filesystem::path& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw SchemaError("cannot parse fault plan: " + std::string(e.what()), "", e.mark.line + 1);
    }
    FaultPlan plan;
    plan.check_interval_s = root["check_interval_s"].as<double>(5.0);
    plan.mttf_s = root["mttf_s"].as<double>(0.0);
    plan.seed = root["seed"].as<uint64_t>(0);
    if (root["leader_kill_rounds"])
        for (const auto& n : root["leader_kill_rounds"]) plan.leader_kill_rounds.push_back(n.as<int64_t>());
    plan.failover = root["failover"].as<std::string>("same-host-restart");
    if (plan.failover != "same-host-restart" && plan.failover != "standby-host")
        throw SchemaError("failover must be same-host-restart or standby-host", "failover");
    return plan;
}

std::vector<KillEvent> schedule_client_kills(const std::vector<std::string>& clients,
                                             const FaultPlan& plan, double horizon_s) {
    std::vector<KillEvent> log;
    if (plan.mttf_s <= 0) return log;
    if (plan.check_interval_s <= 0) throw Error("check interval must be positive");

    for (size_t i = 0; i < clients.size(); ++i) {
        // independent per-client stream so one client's fate never shifts
        // another's draws
        uint64_t seed = plan.seed ^ (0x9E3779B97F4A7C15ull * (i + 1));
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int64_t k = 1;; ++k) {
            double t = static_cast<double>(k) * plan.check_interval_s;
            if (t > horizon_s) break;
            double p = 1.0 - std::exp(-t / plan.mttf_s);
            if (u(rng) < p) {
                log.push_back(KillEvent{clients[i], t, k});
                break;  // failed clients do not recover
            }
        }
    }
    std::sort(log.begin(), log.end(), [](const KillEvent& a, const KillEvent& b) {
        if (a.t_s != b.t_s) return a.t_s < b.t_s;
        return a.client_id < b.client_id;
    });
    return log;
}

nlohmann::json FailoverReport::to_json() const {
    nlohmann::json j;
    j["kills"] = kills;
    j["detect_to_resume_s"] = detect_to_resume_s;
    j["rounds_lost"] = rounds_lost;
    return j;
}

}  // namespace skiff
