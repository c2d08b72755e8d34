#include "skiff/log.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

namespace skiff {

namespace {
std::mutex g_mu;
FILE* g_file = nullptr;
}  // namespace

void set_log_file(const std::string& path) {
    std::lock_guard lk(g_mu);
    if (g_file) {
        ::fclose(g_file);
        g_file = nullptr;
    }
    if (!path.empty()) g_file = ::fopen(path.c_str(), "ae");
}

std::string fmt_double(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

void log_kv(const std::string& component, const std::string& event,
            const std::vector<std::pair<std::string, std::string>>& fields) {
    std::ostringstream os;
    os << "[" << component << "] event=" << event;
    for (const auto& [k, v] : fields) {
        os << " " << k << "=";
        if (v.find(' ') != std::string::npos)
            os << '"' << v << '"';
        else
            os << v;
    }
    os << "\n";
    std::string line = os.str();
    std::lock_guard lk(g_mu);
    ::fwrite(line.data(), 1, line.size(), stderr);
    if (g_file) {
        ::fwrite(line.data(), 1, line.size(), g_file);
        ::fflush(g_file);
    }
}

std::vector<std::map<std::string, std::string>> parse_kv_log(const std::string& path,
                                                             const std::string& event) {
    std::vector<std::map<std::string, std::string>> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        auto bracket = line.find("] ");
        if (line.empty() || line[0] != '[' || bracket == std::string::npos) continue;
        std::map<std::string, std::string> fields;
        fields["__component"] = line.substr(1, bracket - 1);
        size_t pos = bracket + 2;
        while (pos < line.size()) {
            size_t eq = line.find('=', pos);
            if (eq == std::string::npos) break;
            std::string key = line.substr(pos, eq - pos);
            size_t vstart = eq + 1;
            std::string value;
            if (vstart < line.size() && line[vstart] == '"') {
                size_t vend = line.find('"', vstart + 1);
                if (vend == std::string::npos) break;
                value = line.substr(vstart + 1, vend - vstart - 1);
                pos = vend + 2;
            } else {
                size_t vend = line.find(' ', vstart);
                if (vend == std::string::npos) vend = line.size();
                value = line.substr(vstart, vend - vstart);
                pos = vend + 1;
            }
            fields[key] = value;
        }
        if (!event.empty() && fields["event"] != event) continue;
        out.push_back(std::move(fields));
    }
    return out;
}

}  // namespace skiff
