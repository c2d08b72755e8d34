#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>

#include "skiff/process.hpp"

namespace skiff::test {

/// Self-cleaning scratch directory.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "skiff_test_XXXXXX").string();
        path_ = ::mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

private:
    std::filesystem::path path_;
};

/// Path of the skiff CLI binary built alongside the tests.
inline std::filesystem::path skiff_binary() {
    if (const char* env = std::getenv("SKIFF_BIN")) return env;
    // tests live in <build>/tests/, the CLI in <build>/tools/
    auto self = current_executable();
    auto candidate = self.parent_path().parent_path() / "tools" / "skiff";
    if (std::filesystem::exists(candidate)) return candidate;
    return "skiff";
}

inline bool wait_until(const std::function<bool()>& pred, double timeout_s, int poll_ms = 25) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms));
    }
    return pred();
}

}  // namespace skiff::test
