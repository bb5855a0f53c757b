#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace scaffold {

// FNV-1a, 64-bit. Used for prefix fingerprints, content hashes, and seeded
// deterministic draws. Stable across platforms and runs by construction; no
// std::hash anywhere in persisted or replayed state.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = kFnvOffset) {
  for (char ch : data) {
    h ^= static_cast<unsigned char>(ch);
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Maps a hash to [0, 1). 53 bits of mantissa, bias-free for this purpose.
inline double unit_interval(std::uint64_t h) {
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

} // namespace scaffold
