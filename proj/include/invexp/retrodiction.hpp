#pragma once

// State retrodiction for the recapture phase: a Kalman filter over the noisy
// position record followed by fixed-interval RTS smoothing, evaluated at the
// interval start to recover (z(tau), p(tau)) with its error covariance.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "invexp/discretize.hpp"
#include "invexp/types.hpp"

namespace invexp {

/// State-space model of the recaptured oscillator. PSDs are one-sided;
/// the per-sample measurement variance is measurement_noise_psd * f_s / 2.
struct OscillatorModel {
  double omega = 0.0;                  // rad/s
  double mass = 0.0;                   // kg
  double process_noise_psd = 0.0;      // N^2/Hz (force noise intensity)
  double measurement_noise_psd = 0.0;  // m^2/Hz
  double sample_interval = 0.0;        // s

  void validate() const {
    if (!(omega > 0.0) || !(mass > 0.0)) throw std::invalid_argument("OscillatorModel: omega, mass must be > 0");
    if (!(process_noise_psd >= 0.0) || !(measurement_noise_psd >= 0.0))
      throw std::invalid_argument("OscillatorModel: PSDs must be >= 0");
    if (!(sample_interval > 0.0)) throw std::invalid_argument("OscillatorModel: sample_interval must be > 0");
  }

  DiscreteLinearSde discretize() const {
    return discretize_sde(oscillator_drift(mass, omega * omega),
                          force_noise_cov(process_noise_psd), sample_interval);
  }

  double measurement_variance() const {
    return measurement_noise_psd / (2.0 * sample_interval);
  }
};

/// Recapture-trap model with the same force-noise calibration as the closed
/// forms (q = 2 m hbar w_o Gamma).
inline OscillatorModel recapture_model(const PhysicalParams& params, double sample_rate,
                                       double detector_noise_psd) {
  OscillatorModel m;
  m.omega = params.omega_trap;
  m.mass = params.mass;
  m.process_noise_psd = 2.0 * params.mass * params.hbar * params.omega_trap * params.heating_rate;
  m.measurement_noise_psd = detector_noise_psd;
  m.sample_interval = 1.0 / sample_rate;
  return m;
}

/// Effectively uninformative prior, scaled far above any physical state but
/// not so far that it dominates the covariance recursion's dynamic range.
inline GaussianState diffuse_prior(const OscillatorModel& model) {
  const double z_scale = 1e-6;  // 1 um >> any nanoparticle excursion
  GaussianState prior;
  prior.var_z = z_scale * z_scale;
  prior.var_p = z_scale * z_scale * model.mass * model.mass * model.omega * model.omega;
  return prior;
}

struct FilterStep {
  Eigen::Vector2d mean_pred, mean_filt;
  Eigen::Matrix2d cov_pred, cov_filt;
  double innovation = 0.0;
  double innovation_var = 0.0;
};

namespace detail {

inline Eigen::Matrix2d symmetrize(const Eigen::Matrix2d& m) {
  return 0.5 * (m + m.transpose());
}

/// Pseudo-inverse of a PSD 2x2 matrix; rank-deficient covariances occur
/// legitimately (zero process and measurement noise pin the state exactly).
/// The cutoff sits at rounding level: a diffuse prior against a tight
/// posterior legitimately spreads eigenvalues by ~1e12 and every such
/// direction still carries information.
inline Eigen::Matrix2d pinv_psd(const Eigen::Matrix2d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(m);
  const Eigen::Vector2d ev = es.eigenvalues();
  const double cutoff = 1024.0 * std::numeric_limits<double>::epsilon() * std::max(ev(0), ev(1));
  Eigen::Vector2d inv = Eigen::Vector2d::Zero();
  for (int i = 0; i < 2; ++i)
    if (ev(i) > cutoff && ev(i) > 0.0) inv(i) = 1.0 / ev(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

namespace detail {

/// The recursion runs in balanced coordinates (z, p / (m omega)): SI momentum
/// entries sit ~24 orders of magnitude below position, which makes every
/// matrix product and eigensolve lose the information-bearing directions.
/// Public inputs/outputs stay SI; entries are rescaled at the boundary only.
struct Balance {
  double s;  // scaled momentum = s * p

  Eigen::Vector2d mean_in(const Eigen::Vector2d& v) const { return {v(0), v(1) * s}; }
  Eigen::Vector2d mean_out(const Eigen::Vector2d& v) const { return {v(0), v(1) / s}; }
  Eigen::Matrix2d cov_in(Eigen::Matrix2d m) const {
    m(0, 1) *= s;
    m(1, 0) *= s;
    m(1, 1) *= s * s;
    return m;
  }
  Eigen::Matrix2d cov_out(Eigen::Matrix2d m) const {
    m(0, 1) /= s;
    m(1, 0) /= s;
    m(1, 1) /= s * s;
    return m;
  }
  Eigen::Matrix2d transition_in(Eigen::Matrix2d f) const {
    f(0, 1) /= s;
    f(1, 0) *= s;
    return f;
  }
};

}  // namespace detail

/// Forward predict/update recursion; the innovation sequence is kept for
/// whiteness diagnostics. The measurement at the first sample updates the
/// prior in place (no prediction before it). FilterStep quantities are SI.
inline std::vector<FilterStep> kalman_forward(std::span<const double> trace,
                                              const OscillatorModel& model,
                                              const GaussianState& prior) {
  model.validate();
  if (trace.empty()) throw std::invalid_argument("kalman_forward: empty trace");
  if (prior.det() < 0.0 || prior.var_z < 0.0 || prior.var_p < 0.0)
    throw std::invalid_argument("kalman_forward: prior covariance not PSD");

  const auto sde = model.discretize();
  const detail::Balance bal{1.0 / (model.mass * model.omega)};
  const Eigen::Matrix2d f = bal.transition_in(sde.transition);
  const Eigen::Matrix2d q = bal.cov_in(sde.noise_cov);
  const double r = model.measurement_variance();

  std::vector<FilterStep> steps(trace.size());
  Eigen::Vector2d mean = bal.mean_in(prior.mean());
  Eigen::Matrix2d cov = bal.cov_in(prior.covariance());
  for (size_t k = 0; k < trace.size(); ++k) {
    auto& st = steps[k];
    if (k > 0) {
      mean = f * mean;
      cov = detail::symmetrize(f * cov * f.transpose() + q);
    }
    st.mean_pred = bal.mean_out(mean);
    st.cov_pred = bal.cov_out(cov);

    const double s = cov(0, 0) + r;
    st.innovation = trace[k] - mean(0);
    st.innovation_var = s;
    if (s > 0.0) {
      const Eigen::Vector2d gain = cov.col(0) / s;
      mean += gain * st.innovation;
      // Joseph form keeps the update PSD even with a nearly singular prior.
      Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
      ikh.col(0) -= gain;
      cov = detail::symmetrize(ikh * cov * ikh.transpose() + gain * r * gain.transpose());
    }
    // s == 0: the state is already exact along z; nothing to update.
    st.mean_filt = bal.mean_out(mean);
    st.cov_filt = bal.cov_out(cov);
  }
  return steps;
}

/// Backward Rauch-Tung-Striebel pass. Smoothed covariance never exceeds the
/// filtered one in the matrix order.
inline std::vector<GaussianState> rts_smooth(const std::vector<FilterStep>& filtered,
                                             const OscillatorModel& model) {
  if (filtered.empty()) throw std::invalid_argument("rts_smooth: empty filter output");
  const auto sde = model.discretize();
  const detail::Balance bal{1.0 / (model.mass * model.omega)};
  const Eigen::Matrix2d f = bal.transition_in(sde.transition);

  const size_t n = filtered.size();
  std::vector<GaussianState> smoothed(n);
  Eigen::Vector2d mean = bal.mean_in(filtered[n - 1].mean_filt);
  Eigen::Matrix2d cov = bal.cov_in(filtered[n - 1].cov_filt);
  smoothed[n - 1] = GaussianState::from_moments(bal.mean_out(mean), bal.cov_out(cov));
  for (size_t k = n - 1; k-- > 0;) {
    const Eigen::Matrix2d cov_filt = bal.cov_in(filtered[k].cov_filt);
    const Eigen::Matrix2d cov_pred_next = bal.cov_in(filtered[k + 1].cov_pred);
    const Eigen::Matrix2d gain = cov_filt * f.transpose() * detail::pinv_psd(cov_pred_next);
    mean = bal.mean_in(filtered[k].mean_filt) +
           gain * (mean - bal.mean_in(filtered[k + 1].mean_pred));
    cov = detail::symmetrize(cov_filt + gain * (cov - cov_pred_next) * gain.transpose());
    smoothed[k] = GaussianState::from_moments(bal.mean_out(mean), bal.cov_out(cov));
  }
  return smoothed;
}

/// Smoothed state at the first sample of the trace, i.e. at t = tau.
inline GaussianState estimate_recapture_state(std::span<const double> trace,
                                              const OscillatorModel& model,
                                              const GaussianState& prior) {
  const auto filtered = kalman_forward(trace, model, prior);
  return rts_smooth(filtered, model).front();
}

}  // namespace invexp
