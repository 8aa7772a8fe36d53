#pragma once

// Counter-based random streams (Philox4x32-10). Every (seed, stream, domain)
// triple names an independent stream whose output depends only on the draw
// index, so shots can run on any number of workers in any order and still
// produce identical results.

#include <array>
#include <cmath>
#include <cstdint>

namespace invexp {

struct Philox4x32 {
  std::array<uint32_t, 4> counter{0, 0, 0, 0};
  std::array<uint32_t, 2> key{0, 0};

  static std::array<uint32_t, 4> block(std::array<uint32_t, 4> x, std::array<uint32_t, 2> k) {
    constexpr uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const uint64_t p0 = static_cast<uint64_t>(kM0) * x[0];
      const uint64_t p1 = static_cast<uint64_t>(kM1) * x[2];
      x = {static_cast<uint32_t>(p1 >> 32) ^ x[1] ^ k[0], static_cast<uint32_t>(p1),
           static_cast<uint32_t>(p0 >> 32) ^ x[3] ^ k[1], static_cast<uint32_t>(p0)};
      k[0] += kW0;
      k[1] += kW1;
    }
    return x;
  }
};

/// One independent stream of uniforms/normals. Domains separate logically
/// distinct consumers of the same (seed, stream) pair, e.g. shot dynamics
/// vs. detector noise, so enabling one never perturbs the other.
class RandomStream {
 public:
  RandomStream(uint64_t seed, uint64_t stream, uint32_t domain = 0) {
    key_ = {static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
    base_ = {0, 0, static_cast<uint32_t>(stream),
             static_cast<uint32_t>(stream >> 32) ^ (domain * 0x9E3779B9u)};
  }

  /// 64 uniform bits (consumes half a Philox block).
  uint64_t next_u64() {
    if (have_u64_) {
      have_u64_ = false;
      return spare_u64_;
    }
    const auto out = next_block();
    spare_u64_ = (static_cast<uint64_t>(out[3]) << 32) | out[2];
    have_u64_ = true;
    return (static_cast<uint64_t>(out[1]) << 32) | out[0];
  }

  /// Uniform double in (0, 1].
  double next_uniform() {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return 1.0 - u;
  }

  /// Standard normal via Box-Muller (pairs cached).
  double next_normal() {
    if (have_normal_) {
      have_normal_ = false;
      return spare_normal_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kPi * u2;
    spare_normal_ = radius * std::sin(angle);
    have_normal_ = true;
    return radius * std::cos(angle);
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  std::array<uint32_t, 4> next_block() {
    auto ctr = base_;
    ctr[0] = static_cast<uint32_t>(block_index_);
    ctr[1] = static_cast<uint32_t>(block_index_ >> 32);
    ++block_index_;
    return Philox4x32::block(ctr, key_);
  }

  std::array<uint32_t, 2> key_{};
  std::array<uint32_t, 4> base_{};
  uint64_t block_index_ = 0;
  uint64_t spare_u64_ = 0;
  double spare_normal_ = 0.0;
  bool have_u64_ = false;
  bool have_normal_ = false;
};

/// splitmix64, used to derive sub-seeds (bootstrap, phase-1 sampling).
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + salt * 0x9E3779B97F4A7C15ull + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace invexp
