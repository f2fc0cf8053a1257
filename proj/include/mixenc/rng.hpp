#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mixenc {

// Counter-based Philox4x32-10 stream. Identical seed + identical call
// sequence gives a bit-identical stream, and split() derives independent
// streams without touching the parent.
class Philox {
 public:
  explicit Philox(uint64_t seed, uint64_t stream = 0)
      : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<uint32_t>(stream),
                 static_cast<uint32_t>(stream >> 32)} {}

  uint32_t next_u32() {
    if (buf_pos_ == 4) {
      refill();
      buf_pos_ = 0;
    }
    return buf_[buf_pos_++];
  }

  uint64_t next_u64() {
    const uint64_t lo = next_u32();
    const uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t next_below(uint64_t n) {
    // Rejection sampling keeps the stream unbiased.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Box-Muller; one draw consumes two uniforms, the cosine branch only.
  double normal(double mean, double stddev) {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Derived stream; deterministic function of (seed, parent stream, idx).
  Philox split(uint64_t idx) const {
    Philox child(static_cast<uint64_t>(key_[0]) |
                     (static_cast<uint64_t>(key_[1]) << 32),
                 stream_id() * 0x9E3779B97F4A7C15ull + idx + 1);
    return child;
  }

  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      const uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  uint64_t stream_id() const {
    return static_cast<uint64_t>(counter_[2]) |
           (static_cast<uint64_t>(counter_[3]) << 32);
  }

  static void round_once(std::array<uint32_t, 4>& c,
                         std::array<uint32_t, 2>& k) {
    constexpr uint64_t mul_a = 0xD2511F53ull;
    constexpr uint64_t mul_b = 0xCD9E8D57ull;
    const uint64_t p0 = mul_a * c[0];
    const uint64_t p1 = mul_b * c[2];
    const std::array<uint32_t, 4> out = {
        static_cast<uint32_t>(p1 >> 32) ^ c[1] ^ k[0],
        static_cast<uint32_t>(p1),
        static_cast<uint32_t>(p0 >> 32) ^ c[3] ^ k[1],
        static_cast<uint32_t>(p0)};
    c = out;
    k[0] += 0x9E3779B9u;
    k[1] += 0xBB67AE85u;
  }

  void refill() {
    std::array<uint32_t, 4> c = counter_;
    std::array<uint32_t, 2> k = key_;
    for (int i = 0; i < 10; ++i) round_once(c, k);
    buf_ = c;
    // 128-bit counter increment over words 0..1 (words 2..3 hold the stream).
    if (++counter_[0] == 0) ++counter_[1];
  }

  std::array<uint32_t, 2> key_;
  std::array<uint32_t, 4> counter_;
  std::array<uint32_t, 4> buf_{};
  int buf_pos_ = 4;
};

}  // namespace mixenc
