#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace loldu {

// FNV-1a 64-bit. Used for bit-exactness checks (frozen-tensor isolation,
// determinism assertions, merged-weight checksums) -- not cryptographic.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t hash_doubles(std::span<const double> v,
                                  std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

}  // namespace loldu
