#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace skiff {

std::string base64_encode(std::span<const uint8_t> data);
std::vector<uint8_t> base64_decode(const std::string& text);  // throws MalformedFrame

std::string hex_encode(std::span<const uint8_t> data);

/// SHA-256 digest as a lowercase hex string.
std::string sha256_hex(std::span<const uint8_t> data);

}  // namespace skiff
