#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vdiff {

// Counter-based random number generator (Philox4x32-10).
//
// Seeding scheme: a generator is identified by (seed, stream). The 64-bit
// seed forms the Philox key; the stream id occupies the upper 64 bits of the
// 128-bit counter, so distinct streams draw from disjoint counter blocks and
// are statistically independent. fork(k) derives a child stream by mixing k
// into the parent's stream id. Same (seed, stream) and call sequence always
// reproduces the same values, independent of thread count.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;
    std::uint32_t buf[4] = {0, 0, 0, 0};
    int buf_pos = 4;  // 4 == empty
    bool has_cached_normal = false;
    double cached_normal = 0.0;
  };

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    st_.seed = seed;
    st_.stream = stream;
  }

  explicit Rng(const State& s) : st_(s) {}

  Rng fork(std::uint64_t k) const {
    return Rng(st_.seed, mix64(st_.stream ^ mix64(k + 0x9E3779B97F4A7C15ULL)));
  }

  std::uint32_t next_u32() {
    if (st_.buf_pos >= 4) refill();
    return st_.buf[st_.buf_pos++];
  }

  std::uint64_t next_u64() {
    std::uint64_t lo = next_u32();
    std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (st_.has_cached_normal) {
      st_.has_cached_normal = false;
      return st_.cached_normal;
    }
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    st_.cached_normal = r * std::sin(theta);
    st_.has_cached_normal = true;
    return r * std::cos(theta);
  }

  const State& state() const { return st_; }
  void restore(const State& s) { st_ = s; }

  // Raw Philox4x32-10 block, exposed for known-answer tests.
  static void philox4x32_10(std::uint32_t ctr[4], std::uint32_t key0, std::uint32_t key1) {
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = 0xD2511F53ULL * ctr[0];
      std::uint64_t p1 = 0xCD9E8D57ULL * ctr[2];
      std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      std::uint32_t out0 = hi1 ^ ctr[1] ^ key0;
      std::uint32_t out1 = lo1;
      std::uint32_t out2 = hi0 ^ ctr[3] ^ key1;
      std::uint32_t out3 = lo0;
      ctr[0] = out0;
      ctr[1] = out1;
      ctr[2] = out2;
      ctr[3] = out3;
      key0 += 0x9E3779B9U;
      key1 += 0xBB67AE85U;
    }
  }

 private:
  void refill() {
    st_.buf[0] = static_cast<std::uint32_t>(st_.counter);
    st_.buf[1] = static_cast<std::uint32_t>(st_.counter >> 32);
    st_.buf[2] = static_cast<std::uint32_t>(st_.stream);
    st_.buf[3] = static_cast<std::uint32_t>(st_.stream >> 32);
    philox4x32_10(st_.buf, static_cast<std::uint32_t>(st_.seed),
                  static_cast<std::uint32_t>(st_.seed >> 32));
    ++st_.counter;
    st_.buf_pos = 0;
  }

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  State st_;
};

}  // namespace vdiff
