#include "skiff/process.hpp"

#include <cstring>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "skiff/errors.hpp"

namespace skiff {

ProcessHandle::ProcessHandle(ProcessHandle&& o) noexcept
    : pid_(o.pid_), reaped_(o.reaped_), status_(o.status_) {
    o.pid_ = -1;
    o.reaped_ = true;
}

ProcessHandle& ProcessHandle::operator=(ProcessHandle&& o) noexcept {
    if (this != &o) {
        if (pid_ > 0 && !reaped_) kill();
        pid_ = o.pid_;
        reaped_ = o.reaped_;
        status_ = o.status_;
        o.pid_ = -1;
        o.reaped_ = true;
    }
    return *this;
}

ProcessHandle::~ProcessHandle() {
    if (pid_ > 0 && !reaped_) kill();
}

ProcessHandle ProcessHandle::spawn(const std::vector<std::string>& argv,
                                   const std::filesystem::path& log_file,
                                   const std::filesystem::path& workdir) {
    if (argv.empty()) throw Error("spawn needs an argv");
    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    int pid = ::fork();
    if (pid < 0) throw Error("fork failed");
    if (pid == 0) {
        if (!workdir.empty()) {
            if (::chdir(workdir.c_str()) != 0) ::_exit(127);
        }
        if (!log_file.empty()) {
            int fd = ::open(log_file.c_str(), O_CREAT | O_WRONLY | O_APPEND, 0644);
            if (fd >= 0) {
                ::dup2(fd, 1);
                ::dup2(fd, 2);
                ::close(fd);
            }
        }
        ::execv(cargv[0], cargv.data());
        ::_exit(127);
    }
    ProcessHandle h;
    h.pid_ = pid;
    h.reaped_ = false;
    return h;
}

bool ProcessHandle::running() const {
    if (pid_ <= 0 || reaped_) return false;
    int status = 0;
    int r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
        reaped_ = true;
        status_ = status;
        return false;
    }
    return r == 0;
}

void ProcessHandle::kill() {
    if (pid_ <= 0 || reaped_) return;
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status_, 0);
    reaped_ = true;
}

int ProcessHandle::wait() {
    if (pid_ <= 0) return -1;
    if (!reaped_) {
        ::waitpid(pid_, &status_, 0);
        reaped_ = true;
    }
    if (WIFEXITED(status_)) return WEXITSTATUS(status_);
    if (WIFSIGNALED(status_)) return -WTERMSIG(status_);
    return -1;
}

std::filesystem::path current_executable() {
    char buf[4096];
    ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) throw Error("cannot resolve /proc/self/exe");
    buf[n] = '\0';
    return std::filesystem::path(buf);
}

}  // namespace skiff
