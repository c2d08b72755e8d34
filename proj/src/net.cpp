#include "skiff/net.hpp"

#include <cerrno>
#include <chrono>
#include <cstring>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "skiff/errors.hpp"

namespace skiff {

namespace {

constexpr uint32_t kMaxHeaderBytes = 16u << 20;
constexpr size_t kMaxPayloadBytes = size_t{1} << 31;

int deadline_remaining(std::chrono::steady_clock::time_point deadline, bool has_deadline) {
    if (!has_deadline) return -1;
    auto now = std::chrono::steady_clock::now();
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    return ms < 0 ? 0 : static_cast<int>(ms);
}

bool wait_readable(int fd, int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    int r;
    do {
        r = ::poll(&p, 1, timeout_ms);
    } while (r < 0 && errno == EINTR);
    return r > 0 && (p.revents & (POLLIN | POLLHUP | POLLERR));
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos || colon + 1 >= text.size())
        throw MalformedFrame("endpoint must be host:port, got '" + text + "'");
    Endpoint ep;
    ep.host = text.substr(0, colon);
    try {
        int port = std::stoi(text.substr(colon + 1));
        if (port < 0 || port > 65535) throw std::out_of_range("port");
        ep.port = static_cast<uint16_t>(port);
    } catch (const std::exception&) {
        throw MalformedFrame("bad port in endpoint '" + text + "'");
    }
    if (ep.host.empty()) ep.host = "127.0.0.1";
    return ep;
}

int tcp_listen(const Endpoint& ep, Endpoint* actual) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return -1;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd, 128) != 0) {
        ::close(fd);
        return -1;
    }
    if (actual) {
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
        actual->host = ep.host;
        actual->port = ntohs(bound.sin_port);
    }
    return fd;
}

int tcp_connect(const Endpoint& ep, int timeout_ms) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return -1;
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        return -1;
    }
    int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int r = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (r != 0) {
        if (errno != EINPROGRESS) {
            ::close(fd);
            return -1;
        }
        pollfd p{fd, POLLOUT, 0};
        do {
            r = ::poll(&p, 1, timeout_ms);
        } while (r < 0 && errno == EINTR);
        if (r <= 0) {
            ::close(fd);
            return -1;
        }
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            ::close(fd);
            return -1;
        }
    }
    ::fcntl(fd, F_SETFL, flags);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

int tcp_accept(int listen_fd, int timeout_ms) {
    if (timeout_ms >= 0 && !wait_readable(listen_fd, timeout_ms)) return -1;
    int fd;
    do {
        fd = ::accept(listen_fd, nullptr, nullptr);
    } while (fd < 0 && errno == EINTR);
    if (fd >= 0) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    return fd;
}

bool read_exact(int fd, void* buf, size_t n, int deadline_ms) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(deadline_ms);
    bool has_deadline = deadline_ms >= 0;
    uint8_t* p = static_cast<uint8_t*>(buf);
    size_t got = 0;
    while (got < n) {
        int remaining = deadline_remaining(deadline, has_deadline);
        if (has_deadline && remaining == 0) return false;
        if (!wait_readable(fd, remaining)) return false;
        ssize_t r = ::read(fd, p + got, n - got);
        if (r == 0) return false;
        if (r < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            return false;
        }
        got += static_cast<size_t>(r);
    }
    return true;
}

bool write_all(int fd, const void* buf, size_t n) {
    const uint8_t* p = static_cast<const uint8_t*>(buf);
    size_t sent = 0;
    while (sent < n) {
        ssize_t r = ::write(fd, p + sent, n - sent);
        if (r < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        sent += static_cast<size_t>(r);
    }
    return true;
}

void close_fd(int fd) {
    if (fd >= 0) ::close(fd);
}

nlohmann::json Frame::header() const { return nlohmann::json::parse(header_text); }

bool write_frame(int fd, const nlohmann::json& header, std::span<const uint8_t> payload) {
    nlohmann::json h = header;
    h["payload_bytes"] = payload.size();
    std::string text = h.dump();
    uint8_t prefix[4] = {static_cast<uint8_t>(text.size() >> 24), static_cast<uint8_t>(text.size() >> 16),
                         static_cast<uint8_t>(text.size() >> 8), static_cast<uint8_t>(text.size())};
    if (!write_all(fd, prefix, 4)) return false;
    if (!write_all(fd, text.data(), text.size())) return false;
    if (!payload.empty() && !write_all(fd, payload.data(), payload.size())) return false;
    return true;
}

std::optional<Frame> read_frame(int fd, int deadline_ms) {
    uint8_t prefix[4];
    if (!read_exact(fd, prefix, 4, deadline_ms)) return std::nullopt;
    uint32_t hlen = (static_cast<uint32_t>(prefix[0]) << 24) | (static_cast<uint32_t>(prefix[1]) << 16) |
                    (static_cast<uint32_t>(prefix[2]) << 8) | static_cast<uint32_t>(prefix[3]);
    if (hlen == 0 || hlen > kMaxHeaderBytes) throw MalformedFrame("implausible frame header size");
    Frame f;
    f.header_text.resize(hlen);
    if (!read_exact(fd, f.header_text.data(), hlen, deadline_ms)) return std::nullopt;
    size_t payload_bytes = 0;
    try {
        auto h = nlohmann::json::parse(f.header_text);
        payload_bytes = h.value("payload_bytes", size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFrame(std::string("bad frame header: ") + e.what());
    }
    if (payload_bytes > kMaxPayloadBytes) throw MalformedFrame("implausible frame payload size");
    f.payload.resize(payload_bytes);
    if (payload_bytes > 0 && !read_exact(fd, f.payload.data(), payload_bytes, deadline_ms))
        return std::nullopt;
    return f;
}

bool write_json_line(int fd, const nlohmann::json& j) {
    std::string line = j.dump();
    line.push_back('\n');
    return write_all(fd, line.data(), line.size());
}

std::optional<std::string> read_line(int fd, std::string& carry, int deadline_ms) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(deadline_ms);
    bool has_deadline = deadline_ms >= 0;
    for (;;) {
        auto nl = carry.find('\n');
        if (nl != std::string::npos) {
            std::string line = carry.substr(0, nl);
            carry.erase(0, nl + 1);
            return line;
        }
        if (carry.size() > kMaxHeaderBytes) throw MalformedFrame("line too long");
        int remaining = deadline_remaining(deadline, has_deadline);
        if (has_deadline && remaining == 0) return std::nullopt;
        if (!wait_readable(fd, remaining)) return std::nullopt;
        char buf[4096];
        ssize_t r = ::read(fd, buf, sizeof(buf));
        if (r == 0) return std::nullopt;
        if (r < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            return std::nullopt;
        }
        carry.append(buf, static_cast<size_t>(r));
    }
}

double wallclock_s() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

double mono_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace skiff
