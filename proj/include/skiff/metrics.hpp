#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace skiff {

/// One record per global model version. wallclock_s is cumulative session
/// time at round completion so accuracy-vs-time series plot directly;
/// round_s is this round's duration. overhead_s is round_s minus the
/// productive components (training wait, validation); checkpoint cost is
/// tracked separately and counted inside overhead_s.
struct RoundRecord {
    int64_t round = 0;
    double wallclock_s = 0;
    double global_accuracy = 0;
    double global_loss = 0;
    std::vector<std::string> selected_clients;
    std::vector<std::string> failed_clients;
    double agg_time_s = 0;
    double val_time_s = 0;
    double overhead_s = 0;
    double round_s = 0;
    double train_wait_s = 0;
    double dispatch_spread_s = 0;
    double checkpoint_s = 0;

    nlohmann::json to_json() const;
    static RoundRecord from_json(const nlohmann::json& j);
};

/// Appends JSONL records as rounds complete.
class MetricsWriter {
public:
    MetricsWriter() = default;
    explicit MetricsWriter(std::filesystem::path path);
    void append(const RoundRecord& rec);
    const std::filesystem::path& path() const { return path_; }
    bool enabled() const { return !path_.empty(); }

private:
    std::filesystem::path path_;
};

std::vector<RoundRecord> read_metrics_jsonl(const std::filesystem::path& path);
void write_metrics_jsonl(const std::vector<RoundRecord>& records, const std::filesystem::path& path);

/// Fixed, ordered CSV columns; client lists joined with ';'.
void export_metrics_csv(const std::vector<RoundRecord>& records, const std::filesystem::path& path);

}  // namespace skiff
