#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tracepipe {

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace tracepipe
