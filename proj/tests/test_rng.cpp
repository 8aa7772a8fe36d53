#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "invexp/rng.hpp"

using namespace invexp;
using Catch::Approx;

TEST_CASE("philox4x32-10 known-answer vectors", "[rng]") {
  // Reference vectors from the Random123 distribution.
  auto out = Philox4x32::block({0, 0, 0, 0}, {0, 0});
  REQUIRE(out == std::array<uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});

  out = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                          {0xffffffffu, 0xffffffffu});
  REQUIRE(out == std::array<uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});

  out = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                          {0xa4093822u, 0x299f31d0u});
  REQUIRE(out == std::array<uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are deterministic and independent", "[rng]") {
  SECTION("same key, same sequence") {
    RandomStream a(42, 7, 0), b(42, 7, 0);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  }

  SECTION("different stream ids or domains differ") {
    RandomStream a(42, 7, 0), b(42, 8, 0), c(42, 7, 1);
    bool differs_stream = false, differs_domain = false;
    RandomStream a2(42, 7, 0);
    for (int i = 0; i < 16; ++i) {
      const uint64_t va = a.next_u64();
      differs_stream |= va != b.next_u64();
      differs_domain |= a2.next_u64() != c.next_u64();
    }
    REQUIRE(differs_stream);
    REQUIRE(differs_domain);
  }

  SECTION("mix_seed separates salts") {
    std::set<uint64_t> seen;
    for (uint64_t salt = 0; salt < 64; ++salt) seen.insert(mix_seed(1234, salt));
    REQUIRE(seen.size() == 64);
  }
}

TEST_CASE("uniforms and normals have the right shape", "[rng]") {
  RandomStream rng(2024, 0, 0);

  SECTION("uniforms in (0, 1]") {
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.next_uniform();
      REQUIRE(u > 0.0);
      REQUIRE(u <= 1.0);
    }
  }

  SECTION("normal moments") {
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0, sum3 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = rng.next_normal();
      sum += g;
      sum2 += g * g;
      sum3 += g * g * g;
    }
    const double se = 1.0 / std::sqrt((double)n);
    REQUIRE(std::abs(sum / n) < 4.0 * se);
    REQUIRE(sum2 / n == Approx(1.0).margin(4.0 * std::sqrt(2.0) * se));
    REQUIRE(std::abs(sum3 / n) < 4.0 * std::sqrt(15.0) * se);
  }
}
