#pragma once

// Ensemble statistics over per-shot phase-space outcomes: unbiased second
// moments, purity and coherence length through the Gaussian-state formulas,
// and bootstrap standard errors for everything.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "invexp/model.hpp"
#include "invexp/parallel.hpp"
#include "invexp/rng.hpp"
#include "invexp/types.hpp"

namespace invexp {

struct PhaseSample {
  double z = 0.0;  // m
  double p = 0.0;  // kg*m/s
};

struct EnsembleStats {
  int64_t n_shots = 0;
  double mean_z = 0.0, mean_p = 0.0;
  double sigma_z = 0.0, sigma_p = 0.0, cov_zp = 0.0;
  double purity = 0.0, xi = 0.0;
  double mean_z_err = 0.0, mean_p_err = 0.0;
  double sigma_z_err = 0.0, sigma_p_err = 0.0, cov_zp_err = 0.0;
  double purity_err = 0.0, xi_err = 0.0;
  bool degenerate = false;  // zero/negative-determinant sample covariance
};

struct StatsOptions {
  int bootstrap_resamples = 1000;
  uint64_t bootstrap_seed = 0;
  double hbar = kHbar;
  /// Mean estimator covariance to subtract before purity/xi (retrodicted
  /// ensembles): the measured scatter contains the per-shot estimation noise.
  std::optional<Eigen::Matrix2d> deconvolve;
  int n_threads = 1;
};

namespace detail {

struct Moments {
  double mean_z, mean_p, var_z, var_p, cov_zp;
};

template <class Index>
inline Moments sample_moments(std::span<const PhaseSample> samples, Index&& index, int64_t n) {
  double sz = 0.0, sp = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const auto& s = samples[index(i)];
    sz += s.z;
    sp += s.p;
  }
  const double mz = sz / n, mp = sp / n;
  double vzz = 0.0, vpp = 0.0, vzp = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const auto& s = samples[index(i)];
    vzz += (s.z - mz) * (s.z - mz);
    vpp += (s.p - mp) * (s.p - mp);
    vzp += (s.z - mz) * (s.p - mp);
  }
  const double norm = 1.0 / (n - 1);
  return {mz, mp, vzz * norm, vpp * norm, vzp * norm};
}

}  // namespace detail

inline EnsembleStats compute_stats(std::span<const PhaseSample> samples,
                                   const StatsOptions& options = {}) {
  const int64_t n = static_cast<int64_t>(samples.size());
  if (n < 2) throw std::invalid_argument("compute_stats: need at least 2 samples");

  const auto reduce = [&](const detail::Moments& m, EnsembleStats& out) {
    out.mean_z = m.mean_z;
    out.mean_p = m.mean_p;
    double var_z = m.var_z, var_p = m.var_p, cov = m.cov_zp;
    if (options.deconvolve) {
      var_z -= (*options.deconvolve)(0, 0);
      var_p -= (*options.deconvolve)(1, 1);
      cov -= 0.5 * ((*options.deconvolve)(0, 1) + (*options.deconvolve)(1, 0));
    }
    out.sigma_z = var_z > 0.0 ? std::sqrt(var_z) : 0.0;
    out.sigma_p = var_p > 0.0 ? std::sqrt(var_p) : 0.0;
    out.cov_zp = cov;
    const double det = var_z * var_p - cov * cov;
    if (det > 0.0) {
      GaussianState state{0.0, 0.0, var_z, var_p, cov};
      out.purity = purity(state, options.hbar);
      out.xi = coherence_length(state, options.hbar);
      out.degenerate = false;
    } else {
      out.purity = std::numeric_limits<double>::quiet_NaN();
      out.xi = std::numeric_limits<double>::quiet_NaN();
      out.degenerate = true;
    }
  };

  EnsembleStats stats;
  stats.n_shots = n;
  reduce(detail::sample_moments(samples, [](int64_t i) { return i; }, n), stats);

  const int b = options.bootstrap_resamples;
  if (b > 1) {
    std::vector<EnsembleStats> res(b);
    parallel_for(b, options.n_threads, [&](int64_t k) {
      RandomStream rng(options.bootstrap_seed, static_cast<uint64_t>(k), /*domain=*/2);
      std::vector<int64_t> idx(n);
      for (auto& i : idx) i = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(n));
      EnsembleStats s;
      reduce(detail::sample_moments(samples, [&](int64_t i) { return idx[i]; }, n), s);
      res[k] = s;
    });
    const auto spread = [&](auto member) {
      double sum = 0.0, sum2 = 0.0;
      int count = 0;
      for (const auto& s : res) {
        const double v = s.*member;
        if (!std::isfinite(v)) continue;
        sum += v;
        sum2 += v * v;
        ++count;
      }
      if (count < 2) return std::numeric_limits<double>::quiet_NaN();
      const double mean = sum / count;
      return std::sqrt(std::max(sum2 / count - mean * mean, 0.0) * count / (count - 1));
    };
    stats.mean_z_err = spread(&EnsembleStats::mean_z);
    stats.mean_p_err = spread(&EnsembleStats::mean_p);
    stats.sigma_z_err = spread(&EnsembleStats::sigma_z);
    stats.sigma_p_err = spread(&EnsembleStats::sigma_p);
    stats.cov_zp_err = spread(&EnsembleStats::cov_zp);
    stats.purity_err = spread(&EnsembleStats::purity);
    stats.xi_err = spread(&EnsembleStats::xi);
  }
  return stats;
}

}  // namespace invexp
