#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace skiff {

/// Reproducible failure experiment description.
struct FaultPlan {
    double check_interval_s = 5.0;  // kill-check cadence
    double mttf_s = 0;              // Poisson MTTF (mu); 0 disables client kills
    uint64_t seed = 0;
    std::vector<int64_t> leader_kill_rounds;  // kill the leader when these rounds complete
    std::string failover = "same-host-restart";  // or "standby-host"

    static FaultPlan from_yaml_file(const std::filesystem::path& path);
};

struct KillEvent {
    std::string client_id;
    double t_s = 0;      // scheduled kill time from session start
    int64_t check = 0;   // kill-check index that fired
};

/// Precomputes the kill schedule: at every check k (time t_k = k * interval),
/// each surviving client dies with probability 1 - exp(-t_k / mu), drawn from
/// a per-client RNG stream. Killed clients do not recover. Deterministic in
/// (clients, plan), so a seeded plan replays the identical log.
std::vector<KillEvent> schedule_client_kills(const std::vector<std::string>& clients,
                                             const FaultPlan& plan, double horizon_s);

struct FailoverReport {
    int64_t kills = 0;
    std::vector<double> detect_to_resume_s;  // per kill: process death -> resumed
    std::vector<int64_t> rounds_lost;        // per kill
    nlohmann::json to_json() const;
};

}  // namespace skiff
