#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace skiff {

struct Endpoint {
    std::string host = "127.0.0.1";
    uint16_t port = 0;

    std::string str() const { return host + ":" + std::to_string(port); }
    static Endpoint parse(const std::string& text);  // throws MalformedFrame
    bool operator==(const Endpoint& o) const { return host == o.host && port == o.port; }
};

/// Listening socket bound to ep (port 0 picks an ephemeral port; the bound
/// address is returned through `actual`). Returns the fd.
int tcp_listen(const Endpoint& ep, Endpoint* actual = nullptr);

/// Blocking connect with timeout. Returns fd or -1 on failure/timeout.
int tcp_connect(const Endpoint& ep, int timeout_ms);

/// Accept with optional timeout; returns fd or -1 (timeout / closed).
int tcp_accept(int listen_fd, int timeout_ms = -1);

/// Reads exactly n bytes before `deadline_ms` from now elapses (-1: no
/// deadline). Returns false on EOF/timeout/error.
bool read_exact(int fd, void* buf, size_t n, int deadline_ms = -1);
bool write_all(int fd, const void* buf, size_t n);

void close_fd(int fd);

// RPC framing: a 4-byte big-endian length prefix covering the UTF-8 JSON
// header, followed by the header bytes, followed by `payload_bytes` bytes of
// raw payload as announced inside the header. Weight payloads use the
// canonical weight wire format.
struct Frame {
    nlohmann::json header() const;
    std::string header_text;
    std::vector<uint8_t> payload;
};

bool write_frame(int fd, const nlohmann::json& header, std::span<const uint8_t> payload);
std::optional<Frame> read_frame(int fd, int deadline_ms = -1);  // nullopt on EOF/timeout

/// Newline-delimited JSON used by the broker protocol.
bool write_json_line(int fd, const nlohmann::json& j);
std::optional<std::string> read_line(int fd, std::string& carry, int deadline_ms = -1);

double wallclock_s();  // CLOCK_REALTIME seconds
double mono_s();       // steady clock seconds

}  // namespace skiff
