#pragma once

// Weighted nonlinear least squares for the two regressions of the toolkit:
// sigma_z(tau) -> (sigma_0, sigma_disp) against the full expansion model, and
// sigma_disp(omega_inv) -> (sigma_sf, sigma_zeta) against the noise-budget
// decomposition. Both fits run in log-parameter space (non-negativity by
// construction) with analytic Jacobians and an 8-point log-spaced multistart.
//
// Weighting: data enter in variance space, y = sigma^2 with error
// 2 sigma sigma_err propagated from the sigma errors; the parameter
// covariance is the unscaled (J^T W J)^{-1} mapped back to natural units by
// the delta method.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "invexp/model.hpp"
#include "invexp/types.hpp"

namespace invexp {

struct FitResult {
  Eigen::VectorXd parameters;      // natural units
  Eigen::MatrixXd covariance;      // natural units
  double residual_norm = 0.0;      // sqrt(chi2) at the optimum
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_trace;  // chi2 after each accepted step
  std::string weighting;
};

struct CurvePoint {
  double tau = 0.0;      // s
  double sigma_z = 0.0;  // m
  double sigma_z_err = 0.0;
};

struct ExpansionCurve {
  std::vector<CurvePoint> points;

  void validate() const {
    if (points.size() < 3) throw std::invalid_argument("ExpansionCurve: need at least 3 points");
    for (size_t i = 0; i < points.size(); ++i) {
      if (!(points[i].sigma_z > 0.0) || !(points[i].sigma_z_err > 0.0))
        throw std::invalid_argument("ExpansionCurve: sigma_z and errors must be > 0");
      if (i > 0 && !(points[i].tau > points[i - 1].tau))
        throw std::invalid_argument("ExpansionCurve: tau must be strictly increasing");
    }
  }
};

struct BudgetPoint {
  double omega_inv = 0.0;    // rad/s
  double sigma_disp = 0.0;   // m
  double sigma_disp_err = 0.0;
};

namespace detail {

struct LmProblem {
  // Fills residuals r and Jacobian J (d r / d theta) at theta.
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)> eval;
  int n_residuals = 0;
  int n_params = 0;
};

struct LmOutcome {
  Eigen::VectorXd theta;
  Eigen::MatrixXd cov_theta;
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_trace;
};

inline LmOutcome levenberg_marquardt(const LmProblem& problem, Eigen::VectorXd theta,
                                     int max_iterations = 200) {
  Eigen::VectorXd r(problem.n_residuals);
  Eigen::MatrixXd jac(problem.n_residuals, problem.n_params);
  problem.eval(theta, r, jac);
  double chi2 = r.squaredNorm();

  LmOutcome out;
  out.cost_trace.push_back(chi2);
  double lambda = 1e-3;
  int it = 0;
  for (; it < max_iterations; ++it) {
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < 1e-12 * std::max(1.0, chi2)) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd lhs = jtj;
    lhs.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-30);
    const Eigen::VectorXd step = lhs.ldlt().solve(-g);
    if (!step.allFinite()) {
      lambda *= 10.0;
      continue;
    }
    const Eigen::VectorXd trial = theta + step;
    Eigen::VectorXd r_trial(problem.n_residuals);
    Eigen::MatrixXd jac_trial(problem.n_residuals, problem.n_params);
    problem.eval(trial, r_trial, jac_trial);
    const double chi2_trial = r_trial.squaredNorm();
    if (std::isfinite(chi2_trial) && chi2_trial <= chi2) {
      const double drop = chi2 - chi2_trial;
      theta = trial;
      r.swap(r_trial);
      jac.swap(jac_trial);
      chi2 = chi2_trial;
      out.cost_trace.push_back(chi2);
      lambda = std::max(lambda * 0.1, 1e-14);
      if (drop < 1e-14 * std::max(chi2, 1e-300) || step.lpNorm<Eigen::Infinity>() < 1e-12) {
        out.converged = true;
        ++it;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e16) break;
    }
  }
  out.theta = theta;
  out.chi2 = chi2;
  out.iterations = it;
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  out.cov_theta = jtj.completeOrthogonalDecomposition().pseudoInverse();
  return out;
}

/// Best multistart outcome; converged runs beat non-converged at any cost.
inline LmOutcome multistart(const LmProblem& problem, std::span<const Eigen::VectorXd> starts,
                            int max_iterations) {
  LmOutcome best;
  bool have = false;
  for (const auto& theta0 : starts) {
    LmOutcome run = levenberg_marquardt(problem, theta0, max_iterations);
    const bool better = !have || (run.converged && !best.converged) ||
                        (run.converged == best.converged && run.chi2 < best.chi2);
    if (better) {
      best = std::move(run);
      have = true;
    }
  }
  return best;
}

/// 8 log-spaced start pairs around the data-driven scales (s1, s2).
inline std::vector<Eigen::VectorXd> log_spaced_starts(double scale1, double scale2) {
  static constexpr double kOffsets[8][2] = {{0, 0},  {-1, 0}, {0, -1}, {1, 0},
                                            {0, 1},  {-1, -1}, {1, 1},  {-1, 1}};
  std::vector<Eigen::VectorXd> starts;
  for (const auto& o : kOffsets) {
    Eigen::VectorXd t(2);
    t << std::log(scale1) + o[0] * std::log(10.0), std::log(scale2) + o[1] * std::log(10.0);
    starts.push_back(t);
  }
  return starts;
}

inline FitResult finalize(const LmOutcome& out, std::string weighting) {
  FitResult fit;
  fit.parameters = out.theta.array().exp();
  const Eigen::MatrixXd scale = fit.parameters.asDiagonal();
  fit.covariance = scale * out.cov_theta * scale;
  fit.residual_norm = std::sqrt(out.chi2);
  fit.iterations = out.iterations;
  fit.converged = out.converged;
  fit.cost_trace = out.cost_trace;
  fit.weighting = std::move(weighting);
  return fit;
}

}  // namespace detail

/// Fits (sigma_0, sigma_disp) to a sigma_z(tau) curve with Gamma fixed from
/// an independent measurement (carried in params.heating_rate).
inline FitResult fit_expansion(const ExpansionCurve& curve, const PhysicalParams& params,
                               int multistart_points = 8, int max_iterations = 200) {
  curve.validate();
  params.validate();
  const int n = static_cast<int>(curve.points.size());

  // Fixed white-noise contribution and per-point weights in variance space.
  std::vector<double> wn(n), y(n), werr(n), coh_unit(n), shot_unit(n);
  const double r = params.ratio();
  const double f = 1.0 / (r * r) + 1.0;
  for (int i = 0; i < n; ++i) {
    const auto& pt = curve.points[i];
    wn[i] = whitenoise_covariance(params, pt.tau)(0, 0);
    y[i] = pt.sigma_z * pt.sigma_z;
    werr[i] = 2.0 * pt.sigma_z * pt.sigma_z_err;
    const double x = params.omega_inv * pt.tau;
    const double c = std::cosh(x), s = std::sinh(x);
    coh_unit[i] = c * c + r * r * s * s;  // * sigma_0^2
    const double u = detail::one_minus_cosh(x);
    shot_unit[i] = f * f * u * u;  // * sigma_disp^2
  }

  detail::LmProblem problem;
  problem.n_residuals = n;
  problem.n_params = 2;
  problem.eval = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& res, Eigen::MatrixXd& jac) {
    const double s0_sq = std::exp(2.0 * theta(0));
    const double sd_sq = std::exp(2.0 * theta(1));
    for (int i = 0; i < n; ++i) {
      const double coh = s0_sq * coh_unit[i];
      const double shot = sd_sq * shot_unit[i];
      const double model = coh + wn[i] + shot;
      res(i) = (model - y[i]) / werr[i];
      jac(i, 0) = 2.0 * coh / werr[i];   // d model / d log sigma_0
      jac(i, 1) = 2.0 * shot / werr[i];  // d model / d log sigma_disp
    }
  };

  const double s0_scale = std::max(curve.points.front().sigma_z, 1e-15);
  const auto& last = curve.points.back();
  const double tail = std::max(last.sigma_z * last.sigma_z - wn[n - 1], 1e-4 * last.sigma_z * last.sigma_z);
  const double sd_scale = std::sqrt(tail / std::max(shot_unit[n - 1], 1e-12));
  auto starts = detail::log_spaced_starts(s0_scale, std::max(sd_scale, 1e-15));
  starts.resize(std::min<size_t>(starts.size(), std::max(multistart_points, 1)));

  return detail::finalize(detail::multistart(problem, starts, max_iterations),
                          "variance-space WLS, sigma_y = 2*sigma_z*sigma_z_err, cov = (J^T W J)^-1");
}

/// Fits (sigma_sf, sigma_zeta) to sigma_disp(omega_inv) points.
inline FitResult fit_noise_budget(std::span<const BudgetPoint> points, double mass,
                                  int multistart_points = 8, int max_iterations = 200) {
  if (points.size() < 2) throw std::invalid_argument("fit_noise_budget: need at least 2 points");
  if (!(mass > 0.0)) throw std::invalid_argument("fit_noise_budget: mass must be > 0");
  const int n = static_cast<int>(points.size());
  double omega_min = points[0].omega_inv, omega_max = points[0].omega_inv;
  for (const auto& pt : points) {
    if (!(pt.omega_inv > 0.0) || !(pt.sigma_disp > 0.0) || !(pt.sigma_disp_err > 0.0))
      throw std::invalid_argument("fit_noise_budget: all points need positive omega, value, error");
    omega_min = std::min(omega_min, pt.omega_inv);
    omega_max = std::max(omega_max, pt.omega_inv);
  }
  if (!(omega_max > omega_min * (1.0 + 1e-12)))
    throw std::invalid_argument("fit_noise_budget: degenerate design, all omega_inv identical");

  std::vector<double> inv_k_sq(n), y(n), werr(n);
  for (int i = 0; i < n; ++i) {
    const double k = mass * points[i].omega_inv * points[i].omega_inv;
    inv_k_sq[i] = 1.0 / (k * k);
    y[i] = points[i].sigma_disp * points[i].sigma_disp;
    werr[i] = 2.0 * points[i].sigma_disp * points[i].sigma_disp_err;
  }

  detail::LmProblem problem;
  problem.n_residuals = n;
  problem.n_params = 2;
  problem.eval = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& res, Eigen::MatrixXd& jac) {
    const double sf_sq = std::exp(2.0 * theta(0));
    const double zeta_sq = std::exp(2.0 * theta(1));
    for (int i = 0; i < n; ++i) {
      const double force_term = sf_sq * inv_k_sq[i];
      res(i) = (force_term + zeta_sq - y[i]) / werr[i];
      jac(i, 0) = 2.0 * force_term / werr[i];
      jac(i, 1) = 2.0 * zeta_sq / werr[i];
    }
  };

  double sd_min = points[0].sigma_disp, sd_max = points[0].sigma_disp;
  for (const auto& pt : points) {
    sd_min = std::min(sd_min, pt.sigma_disp);
    sd_max = std::max(sd_max, pt.sigma_disp);
  }
  const double sf_scale = sd_max * mass * omega_min * omega_min;
  auto starts = detail::log_spaced_starts(sf_scale, sd_min);
  starts.resize(std::min<size_t>(starts.size(), std::max(multistart_points, 1)));

  return detail::finalize(detail::multistart(problem, starts, max_iterations),
                          "variance-space WLS, sigma_y = 2*sigma_disp*err, cov = (J^T W J)^-1");
}

}  // namespace invexp
