#pragma once

#include <cmath>

#include "invexp/rng.hpp"
#include "invexp/types.hpp"

namespace testing_helpers {

inline constexpr double kTwoPi = 2.0 * invexp::kPi;

/// Parameter set of the main expansion measurement (9.3 kHz inverted trap).
inline invexp::PhysicalParams expansion_params() {
  invexp::PhysicalParams p;
  p.mass = 4.4e-18;
  p.omega_trap = kTwoPi * 44e3;
  p.omega_inv = kTwoPi * 9.3e3;
  p.heating_rate = kTwoPi * 554e3;
  return p;
}

/// 7.6 kHz inverted-trap runs (coherence-length datasets).
inline invexp::PhysicalParams coherence_params() {
  invexp::PhysicalParams p = expansion_params();
  p.omega_inv = kTwoPi * 7.6e3;
  return p;
}

/// Ground-state expansion study (40 kHz trap, 10 kHz inverted).
inline invexp::PhysicalParams groundstate_params() {
  invexp::PhysicalParams p;
  p.mass = 4.4e-18;
  p.omega_trap = kTwoPi * 40e3;
  p.omega_inv = kTwoPi * 10e3;
  p.heating_rate = kTwoPi * 1.0;
  return p;
}

inline double uniform_in(invexp::RandomStream& rng, double lo, double hi) {
  return lo + (hi - lo) * rng.next_uniform();
}

inline double log_uniform_in(invexp::RandomStream& rng, double lo, double hi) {
  return lo * std::exp(std::log(hi / lo) * rng.next_uniform());
}

}  // namespace testing_helpers
