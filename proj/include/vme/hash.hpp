#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace vme::hash {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

// Chainable absorbers; doubles hash by bit pattern so -0.0 != 0.0 upstream
// callers must canonicalize if they care.
inline std::uint64_t absorb(std::uint64_t h, std::uint64_t v) {
  return fnv1a64(&v, sizeof v, h);
}

inline std::uint64_t absorb(std::uint64_t h, std::int64_t v) {
  return absorb(h, static_cast<std::uint64_t>(v));
}

inline std::uint64_t absorb(std::uint64_t h, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return absorb(h, bits);
}

inline std::uint64_t absorb(std::uint64_t h, const std::string& s) {
  h = fnv1a64(s.data(), s.size(), h);
  return absorb(h, static_cast<std::uint64_t>(s.size()));
}

std::string hex(std::uint64_t v);  // 16 lowercase hex digits

}  // namespace vme::hash
