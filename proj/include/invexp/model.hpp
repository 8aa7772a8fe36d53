#pragma once

// Closed-form Gaussian-moment propagation for the release-expand-recapture
// protocol. Position relative to the per-shot combined-trap equilibrium,
// phase (ii) equation of motion z'' = +omega_inv^2 (z - d):
//
//   M(tau)        = [[cosh x, sinh x/(m w)], [m w sinh x, cosh x]],  x = w tau
//   coherent      = M Sigma_0 M^T                      (Sigma_0 thermal)
//   white noise   = int_0^tau M(u) diag(0, q) M(u)^T du,  q = 2 m hbar w_o Gamma
//   shot-to-shot  = sdisp^2 outer(v, v),  v = (1/r^2+1) (1-cosh x, -m w sinh x)
//
// The q calibration makes the position entry reproduce the standard
// white-noise variance formula exactly; momentum and cross entries follow
// from the same response integral.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "invexp/types.hpp"

namespace invexp {

namespace detail {

/// sinh(y) - y without cancellation. Below the switchover the direct
/// evaluation still carries ~6 eps / y^2 of relative error, so use the series.
inline double sinh_minus_arg(double y) {
  const double ay = std::abs(y);
  if (ay < 2e-3) {
    const double y2 = y * y;
    return (y * y2 / 6.0) * (1.0 + y2 / 20.0 * (1.0 + y2 / 42.0 * (1.0 + y2 / 72.0)));
  }
  return std::sinh(y) - y;
}

/// 1 - cosh(x) = -2 sinh^2(x/2), exact at any scale.
inline double one_minus_cosh(double x) {
  const double s = std::sinh(0.5 * x);
  return -2.0 * s * s;
}

inline void guard_expansion(double omega_inv, double tau) {
  if (!(tau >= 0.0)) throw std::domain_error("tau must be >= 0");
  // Rounding slack so tau = guard/omega_inv itself stays valid.
  if (omega_inv * tau > kExpansionGuard * (1.0 + 1e-9))
    throw std::domain_error("omega_inv*tau exceeds overflow guard (" +
                            std::to_string(omega_inv * tau) + " > 30)");
}

/// Momentum diffusion intensity of the white force noise, (kg m/s)^2 / s.
inline double force_noise_intensity(const PhysicalParams& p) {
  return 2.0 * p.mass * p.hbar * p.omega_trap * p.heating_rate;
}

}  // namespace detail

/// Homogeneous phase-space propagator of the inverted potential; det = 1.
inline Eigen::Matrix2d symplectic_map(const PhysicalParams& params, double tau) {
  detail::guard_expansion(params.omega_inv, tau);
  const double x = params.omega_inv * tau;
  const double c = std::cosh(x);
  const double s = std::sinh(x);
  const double mw = params.mass * params.omega_inv;
  Eigen::Matrix2d m;
  m << c, s / mw, mw * s, c;
  return m;
}

/// Position variance of the coherently expanded initial state.
inline double coherent_variance(const PhysicalParams& params, double sigma_0, double tau) {
  detail::guard_expansion(params.omega_inv, tau);
  if (!(sigma_0 > 0.0)) throw std::domain_error("sigma_0 must be > 0");
  const double x = params.omega_inv * tau;
  const double c = std::cosh(x);
  const double s = std::sinh(x);
  const double r = params.ratio();
  return sigma_0 * sigma_0 * (c * c + r * r * s * s);
}

/// Full coherent covariance M Sigma_0 M^T for a thermal initial state.
inline Eigen::Matrix2d coherent_covariance(const PhysicalParams& params, double sigma_0, double tau) {
  detail::guard_expansion(params.omega_inv, tau);
  const double x = params.omega_inv * tau;
  const double c = std::cosh(x);
  const double s = std::sinh(x);
  const double r = params.ratio();
  const double mw = params.mass * params.omega_inv;
  const double s02 = sigma_0 * sigma_0;
  Eigen::Matrix2d cov;
  cov(0, 0) = s02 * (c * c + r * r * s * s);
  cov(1, 1) = s02 * mw * mw * (s * s + r * r * c * c);
  cov(0, 1) = cov(1, 0) = s02 * mw * (1.0 + r * r) * c * s;
  return cov;
}

/// Covariance added by white-noise heating during the inverted-potential
/// phase. Position entry is the standard heating-variance formula; momentum
/// and cross entries are the corresponding response integrals.
inline Eigen::Matrix2d whitenoise_covariance(const PhysicalParams& params, double tau) {
  detail::guard_expansion(params.omega_inv, tau);
  const double w = params.omega_inv;
  const double x = w * tau;
  const double q = detail::force_noise_intensity(params);
  const double mw = params.mass * w;
  const double s = std::sinh(x);
  Eigen::Matrix2d cov;
  cov(0, 0) = q / (4.0 * w * mw * mw) * detail::sinh_minus_arg(2.0 * x);
  cov(1, 1) = q / (4.0 * w) * (std::sinh(2.0 * x) + 2.0 * x);
  cov(0, 1) = cov(1, 0) = q * s * s / (2.0 * params.mass * w * w);
  return cov;
}

/// Rank-1 covariance from the per-shot potential misalignment d ~ N(0, sdisp^2).
inline Eigen::Matrix2d shot_covariance(const PhysicalParams& params, double sigma_disp, double tau) {
  detail::guard_expansion(params.omega_inv, tau);
  if (!(sigma_disp >= 0.0)) throw std::domain_error("sigma_disp must be >= 0");
  const double x = params.omega_inv * tau;
  const double r = params.ratio();
  const double f = 1.0 / (r * r) + 1.0;
  const double u = detail::one_minus_cosh(x);           // z response per unit d
  const double v = -params.mass * params.omega_inv * std::sinh(x);  // p response per unit d
  const double a = sigma_disp * sigma_disp * f * f;
  Eigen::Matrix2d cov;
  cov(0, 0) = a * u * u;
  cov(1, 1) = a * v * v;
  cov(0, 1) = cov(1, 0) = a * u * v;
  return cov;
}

/// Ensemble state after expansion time tau: coherent + white-noise + shot
/// contributions, mean zero relative to the per-shot equilibrium.
inline GaussianState ensemble_state(const PhysicalParams& params, const InitialState& init,
                                    double sigma_disp, double tau) {
  init.validate(params);
  const Eigen::Matrix2d coh = coherent_covariance(params, init.sigma_0, tau);
  const Eigen::Matrix2d wn = whitenoise_covariance(params, tau);
  const Eigen::Matrix2d shot = shot_covariance(params, sigma_disp, tau);
  GaussianState state;
  state.var_z = coh(0, 0) + wn(0, 0) + shot(0, 0);
  state.var_p = coh(1, 1) + wn(1, 1) + shot(1, 1);
  state.cov_zp = coh(0, 1) + wn(0, 1) + shot(0, 1);
  return state;
}

/// Determinant of the ensemble covariance in closed, cancellation-free form.
/// Computing it from the covariance entries loses ~e^{4 omega tau} eps of
/// precision; this expansion has only non-negative terms:
///   det Sigma_0                                (symplectic propagation)
/// + q^2 (sinh x - x)(sinh x + x) / (4 m^2 w^4) (white-noise block)
/// + s0^2 q [(1+r^2) cosh x sinh x + x(1-r^2)] / (2 w)
/// + D m^2 w^2 s0^2 [sinh^2 x + r^2 (1-cosh x)^2]
/// + D q (cosh x - 1)(sinh x - x) / w,          D = sdisp^2 (r^-2+1)^2
/// (the rank-1 shot block has zero determinant of its own).
inline double ensemble_covariance_det(const PhysicalParams& params, const InitialState& init,
                                      double sigma_disp, double tau) {
  detail::guard_expansion(params.omega_inv, tau);
  const double w = params.omega_inv;
  const double x = w * tau;
  const double r = params.ratio();
  const double c = std::cosh(x);
  const double s = std::sinh(x);
  const double u = detail::one_minus_cosh(x);
  const double smx = detail::sinh_minus_arg(x);
  const double q = detail::force_noise_intensity(params);
  const double s0_sq = init.sigma_0 * init.sigma_0;
  const double f = 1.0 / (r * r) + 1.0;
  const double shot_sq = sigma_disp * sigma_disp * f * f;
  const double m = params.mass;

  const double det0 = s0_sq * s0_sq * m * m * params.omega_trap * params.omega_trap;
  const double det_wn = q * q * smx * (s + x) / (4.0 * m * m * w * w * w * w);
  const double mix_coh_wn = s0_sq * q * ((1.0 + r * r) * c * s + x * (1.0 - r * r)) / (2.0 * w);
  const double mix_coh_shot = shot_sq * m * m * w * w * s0_sq * (s * s + r * r * u * u);
  const double mix_wn_shot = -shot_sq * q * u * smx / w;
  return det0 + det_wn + mix_coh_wn + mix_coh_shot + mix_wn_shot;
}

struct PurityResult {
  double value = 0.0;
  bool unphysical = false;  // value > 1 beyond rounding; flagged, not an error
};

inline PurityResult purity_checked(const GaussianState& state, double hbar = kHbar) {
  const double det = state.det();
  if (!(det > 0.0)) throw std::domain_error("purity: covariance determinant must be > 0");
  PurityResult r;
  r.value = hbar / (2.0 * std::sqrt(det));
  r.unphysical = r.value > 1.0 + 1e-9;
  return r;
}

/// hbar / (2 sqrt(det Sigma)); 1 for minimum-uncertainty states.
inline double purity(const GaussianState& state, double hbar = kHbar) {
  return purity_checked(state, hbar).value;
}

/// Coherence length xi = sqrt(8) * purity * sigma_z.
inline double coherence_length(const GaussianState& state, double hbar = kHbar) {
  return std::sqrt(8.0) * purity(state, hbar) * std::sqrt(state.var_z);
}

inline double xi_of_tau(const PhysicalParams& params, const InitialState& init,
                        double sigma_disp, double tau) {
  const GaussianState state = ensemble_state(params, init, sigma_disp, tau);
  const double det = ensemble_covariance_det(params, init, sigma_disp, tau);
  const double pur = params.hbar / (2.0 * std::sqrt(det));
  return std::sqrt(8.0) * pur * std::sqrt(state.var_z);
}

struct XiMax {
  double tau_star = 0.0;  // s
  double xi = 0.0;        // m
};

/// Global maximum of xi(tau) on [0, 30/omega_inv]: 400-point log scan plus
/// golden-section refinement of the bracketing interval.
inline XiMax xi_max(const PhysicalParams& params, const InitialState& init, double sigma_disp) {
  if (!(params.heating_rate > 0.0) && !(sigma_disp > 0.0))
    throw std::domain_error("xi_max: unbounded (no heating and no shot-to-shot noise)");

  const auto xi_at = [&](double tau) { return xi_of_tau(params, init, sigma_disp, tau); };

  const int n_scan = 400;
  const double tau_cap = kExpansionGuard / params.omega_inv;
  const double tau_lo = 1e-6 / params.omega_inv;
  std::vector<double> taus(n_scan);
  const double step = std::log(tau_cap / tau_lo) / (n_scan - 1);
  int best = 0;
  double best_xi = -1.0;
  for (int i = 0; i < n_scan; ++i) {
    taus[i] = tau_lo * std::exp(step * i);
    const double xi = xi_at(taus[i]);
    if (xi > best_xi) {
      best_xi = xi;
      best = i;
    }
  }

  // Golden-section on the bracketing interval around the best scan point.
  double a = taus[std::max(best - 1, 0)];
  double b = taus[std::min(best + 1, n_scan - 1)];
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = xi_at(x1);
  double f2 = xi_at(x2);
  for (int it = 0; it < 200 && (b - a) > 1e-7 * b; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = xi_at(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = xi_at(x1);
    }
  }
  XiMax result;
  result.tau_star = 0.5 * (a + b);
  result.xi = xi_at(result.tau_star);

  // tau = 0 is a boundary candidate (pure decay when noise dominates).
  const double xi0 = coherence_length(
      GaussianState{0.0, 0.0, init.covariance(params)(0, 0), init.covariance(params)(1, 1), 0.0},
      params.hbar);
  if (xi0 > result.xi) {
    result.tau_star = 0.0;
    result.xi = xi0;
  }
  return result;
}

/// Effective displacement noise from the two shot-to-shot sources:
/// sdisp^2 = sigma_sf^2 (m omega_inv^2)^-2 + sigma_zeta^2.
inline double sigma_disp_from_budget(const NoiseBudget& budget, const PhysicalParams& params) {
  budget.validate();
  if (!(params.omega_inv > 0.0)) throw std::invalid_argument("omega_inv must be > 0");
  const double k = params.mass * params.omega_inv * params.omega_inv;
  return std::hypot(budget.sigma_sf / k, budget.sigma_zeta);
}

/// Electrode voltage-noise spectral density producing heating rate
/// target_gamma: S_v = 2 d^2 Gamma hbar m omega_trap / q^2, V^2/Hz.
inline double required_voltage_noise(const PhysicalParams& params, double target_gamma) {
  if (!(params.charge > 0.0)) throw std::invalid_argument("required_voltage_noise: charge not set");
  if (!(params.electrode_distance > 0.0))
    throw std::invalid_argument("required_voltage_noise: electrode_distance not set");
  if (!(target_gamma >= 0.0)) throw std::domain_error("target_gamma must be >= 0");
  const double d = params.electrode_distance;
  return 2.0 * d * d * target_gamma * params.hbar * params.mass * params.omega_trap /
         (params.charge * params.charge);
}

/// Low-frequency chip-position noise level keeping the shot-to-shot spread
/// below sigma_target over an expansion of duration tau_ex, m^2/Hz.
inline double required_position_noise(double tau_ex, double sigma_target) {
  if (!(tau_ex > 0.0)) throw std::domain_error("tau_ex must be > 0");
  return 2.0 * tau_ex * sigma_target * sigma_target;
}

/// Matching stray-force noise level, N^2/Hz.
inline double required_force_noise(const PhysicalParams& params, double tau_ex, double sigma_target) {
  if (!(tau_ex > 0.0)) throw std::domain_error("tau_ex must be > 0");
  const double f = params.mass * params.omega_inv * params.omega_inv * sigma_target;
  return 2.0 * tau_ex * f * f;
}

}  // namespace invexp
