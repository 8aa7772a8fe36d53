#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace invexp {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// CODATA reduced Planck constant, J*s.
inline constexpr double kHbar = 1.054571817e-34;

/// Elementary charge, C.
inline constexpr double kElementaryCharge = 1.602176634e-19;

/// Hard guard on Omega_inv * tau. cosh(30)^2 ~ 1e26 of expansion, far beyond
/// any physical regime; past this the closed forms overflow usefully long
/// before double overflow would catch it.
inline constexpr double kExpansionGuard = 30.0;

/// Trap and particle parameters of the z mode.
///
/// Angular frequencies are rad/s. `omega_trap` is the net confining frequency
/// with both potentials on (phases i/iii); `omega_inv` characterizes the
/// inverted electrical potential (phase ii). `heating_rate` is the white-noise
/// heating rate in phonons of the confining trap per unit time, as an angular
/// rate. `charge` and `electrode_distance` are only consumed by the
/// requirement formulas and may be left zero otherwise.
struct PhysicalParams {
  double mass = 0.0;                // kg
  double omega_trap = 0.0;          // rad/s
  double omega_inv = 0.0;           // rad/s
  double heating_rate = 0.0;        // rad/s
  double hbar = kHbar;              // J*s, overridable for unit tests
  double charge = 0.0;              // C
  double electrode_distance = 0.0;  // m

  /// Frequency ratio r = omega_trap / omega_inv.
  double ratio() const { return omega_trap / omega_inv; }

  /// Bare optical curvature frequency: omega_bare^2 = omega_trap^2 + omega_inv^2.
  double omega_bare() const { return std::hypot(omega_trap, omega_inv); }

  /// Ground-state position spread sqrt(hbar / (2 m omega_trap)), m.
  double sigma_zpf() const { return std::sqrt(hbar / (2.0 * mass * omega_trap)); }

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("PhysicalParams: mass must be > 0");
    if (!(omega_trap > 0.0)) throw std::invalid_argument("PhysicalParams: omega_trap must be > 0");
    if (!(omega_inv > 0.0)) throw std::invalid_argument("PhysicalParams: omega_inv must be > 0");
    if (!(heating_rate >= 0.0)) throw std::invalid_argument("PhysicalParams: heating_rate must be >= 0");
    if (!(hbar > 0.0)) throw std::invalid_argument("PhysicalParams: hbar must be > 0");
    const double r = ratio();
    if (!std::isfinite(r) || !(r > 0.0)) throw std::invalid_argument("PhysicalParams: omega_trap/omega_inv must be finite and > 0");
  }
};

/// Gaussian phase-space state of the z mode: mean vector and 2x2 covariance.
struct GaussianState {
  double mean_z = 0.0;  // m
  double mean_p = 0.0;  // kg*m/s
  double var_z = 0.0;   // m^2
  double var_p = 0.0;   // (kg*m/s)^2
  double cov_zp = 0.0;  // kg*m^2/s

  Eigen::Vector2d mean() const { return {mean_z, mean_p}; }

  Eigen::Matrix2d covariance() const {
    Eigen::Matrix2d c;
    c << var_z, cov_zp, cov_zp, var_p;
    return c;
  }

  double det() const { return var_z * var_p - cov_zp * cov_zp; }

  static GaussianState from_moments(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov) {
    return {mean(0), mean(1), cov(0, 0), cov(1, 1), 0.5 * (cov(0, 1) + cov(1, 0))};
  }

  void validate() const {
    if (!(var_z >= 0.0) || !(var_p >= 0.0)) throw std::invalid_argument("GaussianState: variances must be >= 0");
    if (det() < -8.0 * std::numeric_limits<double>::epsilon() * var_z * var_p)
      throw std::invalid_argument("GaussianState: covariance not positive semidefinite");
  }
};

/// How momentum spread and correlation of the feedback-cooled state follow
/// from sigma_0. ThermalEquipartition: var_p = (m omega_trap)^2 sigma_0^2,
/// cov = 0 (exact steady state of ideal velocity damping).
enum class CorrelationModel { ThermalEquipartition };

struct InitialState {
  double sigma_0 = 0.0;  // m
  CorrelationModel correlation_model = CorrelationModel::ThermalEquipartition;

  void validate(const PhysicalParams& params) const {
    const double zpf = params.sigma_zpf();
    if (!(sigma_0 >= zpf * (1.0 - 1e-12)))
      throw std::invalid_argument("InitialState: sigma_0 " + std::to_string(sigma_0) +
                                  " below zero-point size " + std::to_string(zpf));
  }

  /// Covariance of the cooled state per the correlation model.
  Eigen::Matrix2d covariance(const PhysicalParams& params) const {
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    c(0, 0) = sigma_0 * sigma_0;
    c(1, 1) = sigma_0 * sigma_0 * params.mass * params.mass * params.omega_trap * params.omega_trap;
    return c;
  }
};

/// Shot-to-shot noise budget: per-realization stray-force and chip-position
/// standard deviations, constant within one shot.
struct NoiseBudget {
  double sigma_sf = 0.0;    // N
  double sigma_zeta = 0.0;  // m

  void validate() const {
    if (!(sigma_sf >= 0.0) || !(sigma_zeta >= 0.0))
      throw std::invalid_argument("NoiseBudget: components must be >= 0");
  }
};

}  // namespace invexp
