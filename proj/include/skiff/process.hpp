#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace skiff {

/// A spawned child process. Kill is SIGKILL (matching the container-kill
/// style of failure injection); stdout/stderr can be redirected to a file.
class ProcessHandle {
public:
    ProcessHandle() = default;
    ProcessHandle(const ProcessHandle&) = delete;
    ProcessHandle& operator=(const ProcessHandle&) = delete;
    ProcessHandle(ProcessHandle&& o) noexcept;
    ProcessHandle& operator=(ProcessHandle&& o) noexcept;
    ~ProcessHandle();  // kills and reaps if still running

    static ProcessHandle spawn(const std::vector<std::string>& argv,
                               const std::filesystem::path& log_file = {},
                               const std::filesystem::path& workdir = {});

    bool running() const;
    void kill();          // SIGKILL + reap
    int wait();           // blocks; returns exit status (or -signal)
    int pid() const { return pid_; }
    bool valid() const { return pid_ > 0; }

private:
    int pid_ = -1;
    mutable bool reaped_ = false;
    mutable int status_ = 0;
};

/// Absolute path of the currently running executable.
std::filesystem::path current_executable();

}  // namespace skiff
