#pragma once

// Exact discretization of the linear SDE dx = A x dt + B dW over a step h,
// via the Van Loan block matrix exponential:
//
//   C = [[-A, S], [0, A^T]] h,  S = B B^T
//   exp(C) = [[., G], [0, E]]  ->  F = E^T = exp(A h),  Q = F G
//
// No discretization error; the step covariance Q is the exact integral
// int_0^h exp(A s) S exp(A^T s) ds.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "invexp/rng.hpp"

namespace invexp {

struct DiscreteLinearSde {
  Eigen::Matrix2d transition = Eigen::Matrix2d::Identity();   // F
  Eigen::Matrix2d noise_cov = Eigen::Matrix2d::Zero();        // Q
  Eigen::Matrix2d noise_chol = Eigen::Matrix2d::Zero();       // L with L L^T = Q

  Eigen::Vector2d step(const Eigen::Vector2d& x, RandomStream& rng) const {
    const Eigen::Vector2d g{rng.next_normal(), rng.next_normal()};
    return transition * x + noise_chol * g;
  }
};

/// Lower-triangular square root of a 2x2 PSD matrix; tolerates rank
/// deficiency (exact zero process noise).
inline Eigen::Matrix2d psd_sqrt_2x2(const Eigen::Matrix2d& q) {
  Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
  const double a = q(0, 0);
  const double b = q(1, 1);
  const double c = q(1, 0);
  if (a > 0.0) {
    l(0, 0) = std::sqrt(a);
    l(1, 0) = c / l(0, 0);
    l(1, 1) = std::sqrt(std::max(b - l(1, 0) * l(1, 0), 0.0));
  } else if (b > 0.0) {
    l(1, 1) = std::sqrt(b);
  }
  return l;
}

inline DiscreteLinearSde discretize_sde(const Eigen::Matrix2d& drift,
                                        const Eigen::Matrix2d& diffusion_cov, double h) {
  // Balance the state before exponentiating: in SI units the off-diagonal
  // drift entries (1/m vs m w^2) sit ~25 orders of magnitude apart, which
  // forces the scaling-and-squaring exponential through dozens of squarings
  // and wrecks it. Momentum rescaled by s ~ 1/(m w) makes the drift O(w).
  double s = 1.0;
  if (drift(0, 1) != 0.0 && drift(1, 0) != 0.0)
    s = std::sqrt(std::abs(drift(0, 1) / drift(1, 0)));
  Eigen::Matrix2d a = drift;
  a(0, 1) /= s;
  a(1, 0) *= s;
  Eigen::Matrix2d cov = diffusion_cov;
  cov(0, 1) *= s;
  cov(1, 0) *= s;
  cov(1, 1) *= s * s;

  Eigen::Matrix4d c = Eigen::Matrix4d::Zero();
  c.topLeftCorner<2, 2>() = -a;
  c.topRightCorner<2, 2>() = cov;
  c.bottomRightCorner<2, 2>() = a.transpose();
  const Eigen::Matrix4d e = (c * h).exp();

  DiscreteLinearSde out;
  out.transition = e.bottomRightCorner<2, 2>().transpose();
  out.noise_cov = out.transition * e.topRightCorner<2, 2>();
  out.noise_cov = 0.5 * (out.noise_cov + out.noise_cov.transpose());

  // Undo the balancing: F = D^-1 F' D, Q = D^-1 Q' D^-1 with D = diag(1, s).
  out.transition(0, 1) *= s;
  out.transition(1, 0) /= s;
  out.noise_cov(0, 1) /= s;
  out.noise_cov(1, 0) /= s;
  out.noise_cov(1, 1) /= s * s;

  // Clamp rounding-level negatives on the diagonal.
  out.noise_cov(0, 0) = std::max(out.noise_cov(0, 0), 0.0);
  out.noise_cov(1, 1) = std::max(out.noise_cov(1, 1), 0.0);
  out.noise_chol = psd_sqrt_2x2(out.noise_cov);
  return out;
}

/// Drift matrix of the z mode: z' = p/m, p' = -m curvature z - damping p.
/// curvature < 0 describes the inverted potential.
inline Eigen::Matrix2d oscillator_drift(double mass, double curvature, double damping = 0.0) {
  Eigen::Matrix2d a;
  a << 0.0, 1.0 / mass, -mass * curvature, -damping;
  return a;
}

/// White-force diffusion matrix diag(0, q).
inline Eigen::Matrix2d force_noise_cov(double intensity) {
  Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
  s(1, 1) = intensity;
  return s;
}

}  // namespace invexp
