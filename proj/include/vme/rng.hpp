#pragma once

#include <cstdint>
#include <vector>

namespace vme::rng {

// 64-bit finalizer with full avalanche (SplitMix64).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Purpose tags keep independent uses of the same seed decorrelated.
enum : std::uint64_t {
  kTagDisorder = 0x4449534f52444552ull,
  kTagProductState = 0x50524f4453544154ull,
  kTagScramble = 0x534352414d424c45ull,
  kTagSubset = 0x5355425345542121ull,
  kTagIidNull = 0x4949444e554c4c21ull,
};

// Counter-based generator: every draw is a pure function of (key, counter),
// so streams can be split per (seed, run, site, ...) without shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix64(seed)) {}

  // Absorbs one stream word; derive(a).derive(b) != derive(b).derive(a).
  CounterRng derive(std::uint64_t word) const {
    CounterRng out = *this;
    out.key_ = mix64(key_ ^ mix64(word ^ 0xa5a5a5a5a5a5a5a5ull));
    return out;
  }

  std::uint64_t word(std::uint64_t counter) const {
    return mix64(key_ + counter * 0x9e3779b97f4a7c15ull);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01(std::uint64_t counter) const {
    return static_cast<double>(word(counter) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform01(counter);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

// Sequential draws on top of a CounterRng, for shuffles and sampling loops.
class Stream {
 public:
  explicit Stream(CounterRng base) : base_(base) {}

  std::uint64_t next_word() { return base_.word(counter_++); }
  double uniform01() { return static_cast<double>(next_word() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = -n % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t w = next_word();
      if (w >= threshold) return w % n;
    }
  }

  // Rademacher +/-1.
  double sign() { return (next_word() & 1ull) ? 1.0 : -1.0; }

  // Fisher-Yates; identical result regardless of platform.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Partial Fisher-Yates: after the call, v[0..k) is a uniform k-subset in
  // uniform random order.
  template <typename T>
  void shuffle_prefix(std::vector<T>& v, std::size_t k) {
    for (std::size_t i = 0; i < k && i + 1 < v.size(); ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(v.size() - i));
      std::swap(v[i], v[j]);
    }
  }

 private:
  CounterRng base_;
  std::uint64_t counter_ = 0;
};

}  // namespace vme::rng
