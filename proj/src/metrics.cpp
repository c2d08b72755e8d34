#include "skiff/metrics.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "skiff/errors.hpp"

namespace skiff {

using nlohmann::json;

json RoundRecord::to_json() const {
    json j;
    j["round"] = round;
    j["wallclock_s"] = wallclock_s;
    j["global_accuracy"] = global_accuracy;
    j["global_loss"] = global_loss;
    j["selected_clients"] = selected_clients;
    j["failed_clients"] = failed_clients;
    j["agg_time_s"] = agg_time_s;
    j["val_time_s"] = val_time_s;
    j["overhead_s"] = overhead_s;
    j["round_s"] = round_s;
    j["train_wait_s"] = train_wait_s;
    j["dispatch_spread_s"] = dispatch_spread_s;
    j["checkpoint_s"] = checkpoint_s;
    return j;
}

RoundRecord RoundRecord::from_json(const json& j) {
    RoundRecord r;
    r.round = j.value("round", int64_t{0});
    r.wallclock_s = j.value("wallclock_s", 0.0);
    r.global_accuracy = j.value("global_accuracy", 0.0);
    r.global_loss = j.value("global_loss", 0.0);
    r.selected_clients = j.value("selected_clients", std::vector<std::string>{});
    r.failed_clients = j.value("failed_clients", std::vector<std::string>{});
    r.agg_time_s = j.value("agg_time_s", 0.0);
    r.val_time_s = j.value("val_time_s", 0.0);
    r.overhead_s = j.value("overhead_s", 0.0);
    r.round_s = j.value("round_s", 0.0);
    r.train_wait_s = j.value("train_wait_s", 0.0);
    r.dispatch_spread_s = j.value("dispatch_spread_s", 0.0);
    r.checkpoint_s = j.value("checkpoint_s", 0.0);
    return r;
}

MetricsWriter::MetricsWriter(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void MetricsWriter::append(const RoundRecord& rec) {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoFailure("cannot append metrics to " + path_.string());
    out << rec.to_json().dump() << "\n";
}

std::vector<RoundRecord> read_metrics_jsonl(const std::filesystem::path& path) {
    std::vector<RoundRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(RoundRecord::from_json(json::parse(line)));
        } catch (const json::exception&) {
            continue;  // tolerate a torn tail line after a crash
        }
    }
    return out;
}

void write_metrics_jsonl(const std::vector<RoundRecord>& records, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    for (const auto& r : records) out << r.to_json().dump() << "\n";
}

void export_metrics_csv(const std::vector<RoundRecord>& records, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << "round,wallclock_s,global_accuracy,global_loss,selected_clients,failed_clients,"
           "agg_time_s,val_time_s,overhead_s,round_s,train_wait_s,dispatch_spread_s,checkpoint_s\n";
    auto join = [](const std::vector<std::string>& v) {
        std::ostringstream os;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) os << ';';
            os << v[i];
        }
        return os.str();
    };
    for (const auto& r : records) {
        out << r.round << ',' << r.wallclock_s << ',' << r.global_accuracy << ',' << r.global_loss
            << ',' << join(r.selected_clients) << ',' << join(r.failed_clients) << ','
            << r.agg_time_s << ',' << r.val_time_s << ',' << r.overhead_s << ',' << r.round_s << ','
            << r.train_wait_s << ',' << r.dispatch_spread_s << ',' << r.checkpoint_s << "\n";
    }
    if (!out) throw IoFailure("short write on " + path.string());
}

}  // namespace skiff
