#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sptseg {

/// Independent generator for a named sub-stream ("data", "init", "train", ...)
/// of a master seed. Streams with different names never share state.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace sptseg
