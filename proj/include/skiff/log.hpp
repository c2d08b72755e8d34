#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace skiff {

/// Structured key=value log line with a component prefix:
///   [leader] event=round_complete round=7 wallclock_s=12.41
/// Values containing spaces are quoted. Written to stderr and, when set, to
/// the process log file.
void log_kv(const std::string& component, const std::string& event,
            const std::vector<std::pair<std::string, std::string>>& fields = {});

void set_log_file(const std::string& path);  // empty disables the file sink

std::string fmt_double(double v, int precision = 6);

/// Parses key=value log lines back into maps; lines are filtered to the
/// given event name when non-empty. Used by supervisors and tests.
std::vector<std::map<std::string, std::string>> parse_kv_log(const std::string& path,
                                                             const std::string& event = "");

}  // namespace skiff
