#pragma once

// Maximally achievable coherence length over a (sigma_disp, Gamma) grid, with
// contour polylines for requested xi levels. xi_max is monotone non-increasing
// along both axes, so each level set is a single-valued curve sigma_disp(Gamma)
// and contours reduce to per-row crossings interpolated in log-log space.

#include <cmath>
#include <vector>

#include "invexp/model.hpp"
#include "invexp/parallel.hpp"
#include "invexp/types.hpp"

namespace invexp {

struct XiMaxMap {
  std::vector<double> sigma_disp_values;  // m, ascending
  std::vector<double> gamma_values;       // rad/s, ascending
  std::vector<double> xi;                 // row-major [gamma][sigma_disp], m
  std::vector<double> tau_star;           // s, same layout

  double at(size_t gamma_idx, size_t sigma_idx) const {
    return xi[gamma_idx * sigma_disp_values.size() + sigma_idx];
  }
};

inline std::vector<double> log_spaced(double lo, double hi, int n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  const double step = std::log(hi / lo) / (n - 1);
  for (int i = 0; i < n; ++i) v[i] = lo * std::exp(step * i);
  return v;
}

inline XiMaxMap ximax_map(std::vector<double> sigma_disp_values, std::vector<double> gamma_values,
                          PhysicalParams params, const InitialState& init, int n_threads = 1) {
  for (double v : sigma_disp_values)
    if (!(v > 0.0)) throw std::invalid_argument("ximax_map: sigma_disp grid values must be > 0");
  for (double v : gamma_values)
    if (!(v > 0.0)) throw std::invalid_argument("ximax_map: gamma grid values must be > 0");

  XiMaxMap map;
  map.sigma_disp_values = std::move(sigma_disp_values);
  map.gamma_values = std::move(gamma_values);
  const int64_t n_sd = static_cast<int64_t>(map.sigma_disp_values.size());
  const int64_t n_cells = n_sd * static_cast<int64_t>(map.gamma_values.size());
  map.xi.resize(n_cells);
  map.tau_star.resize(n_cells);
  parallel_for(n_cells, n_threads, [&](int64_t cell) {
    PhysicalParams cell_params = params;
    cell_params.heating_rate = map.gamma_values[cell / n_sd];
    const XiMax best = xi_max(cell_params, init, map.sigma_disp_values[cell % n_sd]);
    map.xi[cell] = best.xi;
    map.tau_star[cell] = best.tau_star;
  });
  return map;
}

struct ContourPoint {
  double gamma = 0.0;       // rad/s
  double sigma_disp = 0.0;  // m
};

/// Level curve xi_max = level as an ordered polyline (one point per gamma row
/// where the level is crossed).
inline std::vector<ContourPoint> extract_contour(const XiMaxMap& map, double level) {
  std::vector<ContourPoint> poly;
  const size_t n_sd = map.sigma_disp_values.size();
  for (size_t g = 0; g < map.gamma_values.size(); ++g) {
    for (size_t s = 0; s + 1 < n_sd; ++s) {
      const double a = map.at(g, s);
      const double b = map.at(g, s + 1);
      // xi decreases with sigma_disp; find the bracketing pair.
      if ((a >= level && b < level) || (a <= level && b > level)) {
        const double la = std::log(a), lb = std::log(b);
        const double t = (std::log(level) - la) / (lb - la);
        const double lsd = std::log(map.sigma_disp_values[s]) +
                           t * (std::log(map.sigma_disp_values[s + 1]) - std::log(map.sigma_disp_values[s]));
        poly.push_back({map.gamma_values[g], std::exp(lsd)});
        break;
      }
    }
  }
  return poly;
}

struct ScalingReport {
  double base_xi = 0.0;
  double improved_xi = 0.0;
  double ratio = 0.0;
  bool within_expected = false;  // ratio in [5, 20]
};

/// Gain in xi_max from improving sigma_disp tenfold and Gamma hundredfold
/// (other improvement factors selectable for what-if studies).
inline ScalingReport scaling_check(const PhysicalParams& params, const InitialState& init,
                                   double sigma_disp, double gamma, double sigma_disp_factor = 10.0,
                                   double gamma_factor = 100.0) {
  PhysicalParams base = params;
  base.heating_rate = gamma;
  PhysicalParams improved = params;
  improved.heating_rate = gamma / gamma_factor;

  ScalingReport report;
  report.base_xi = xi_max(base, init, sigma_disp).xi;
  report.improved_xi = xi_max(improved, init, sigma_disp / sigma_disp_factor).xi;
  report.ratio = report.improved_xi / report.base_xi;
  report.within_expected = report.ratio >= 5.0 && report.ratio <= 20.0;
  return report;
}

}  // namespace invexp
