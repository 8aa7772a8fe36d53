#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "invexp/fit.hpp"
#include "invexp/mapgrid.hpp"
#include "invexp/model.hpp"
#include "invexp/stats.hpp"
#include "test_helpers.hpp"

using namespace invexp;
using namespace testing_helpers;
using Catch::Approx;

namespace {

ExpansionCurve model_curve(const PhysicalParams& p, double sigma0, double sigma_disp,
                           double rel_err, const std::vector<double>& taus,
                           uint64_t noise_seed = 0) {
  ExpansionCurve curve;
  RandomStream rng(noise_seed, 0);
  for (const double tau : taus) {
    const double sz = std::sqrt(ensemble_state(p, InitialState{sigma0}, sigma_disp, tau).var_z);
    const double err = rel_err * sz;
    const double noisy = noise_seed ? sz + err * rng.next_normal() : sz;
    curve.points.push_back({tau, noisy, err});
  }
  return curve;
}

const std::vector<double> kTauGrid{0.0,    5e-6,  10e-6, 15e-6, 20e-6, 25e-6,
                                   30e-6,  35e-6, 40e-6, 45e-6, 50e-6};

}  // namespace

TEST_CASE("compute_stats moments and bootstrap", "[analysis]") {
  SECTION("two-point ensemble: n-1 estimator") {
    const double a = 3e-9;
    std::vector<PhaseSample> samples{{a, 0.0}, {-a, 0.0}};
    StatsOptions opts;
    opts.bootstrap_resamples = 0;
    const auto stats = compute_stats(samples, opts);
    REQUIRE(stats.sigma_z == Approx(a * std::sqrt(2.0)).epsilon(1e-14));
    REQUIRE(stats.mean_z == 0.0);
    REQUIRE(stats.degenerate);  // zero momentum spread has no purity
    REQUIRE(compute_stats(samples).n_shots == 2);
  }

  SECTION("bootstrap error of sigma_z follows Gaussian theory") {
    const auto p = expansion_params();
    const double s0 = 170e-12;
    const double mw = p.mass * p.omega_trap;
    RandomStream rng(21, 0);
    const int n = 4000;
    std::vector<PhaseSample> samples(n);
    for (auto& s : samples) s = {s0 * rng.next_normal(), mw * s0 * rng.next_normal()};
    StatsOptions opts;
    opts.bootstrap_seed = 77;
    const auto stats = compute_stats(samples, opts);
    REQUIRE(stats.sigma_z == Approx(s0).epsilon(0.05));
    REQUIRE(stats.sigma_z_err == Approx(s0 / std::sqrt(2.0 * n)).epsilon(0.2));
    REQUIRE(stats.purity == Approx(purity(GaussianState{0, 0, s0 * s0, mw * mw * s0 * s0, 0})).epsilon(0.1));
    REQUIRE(stats.xi_err > 0.0);
  }

  SECTION("deconvolution removes known estimator noise") {
    RandomStream rng(22, 0);
    const double sig_true = 2e-9, sig_est = 1e-9;
    const int n = 30000;
    std::vector<PhaseSample> samples(n);
    for (auto& s : samples)
      s = {sig_true * rng.next_normal() + sig_est * rng.next_normal(), 1e-20 * rng.next_normal()};
    StatsOptions opts;
    opts.bootstrap_resamples = 0;
    opts.deconvolve = Eigen::Matrix2d{{sig_est * sig_est, 0.0}, {0.0, 0.0}};
    const auto stats = compute_stats(samples, opts);
    REQUIRE(stats.sigma_z == Approx(sig_true).epsilon(0.02));
  }
}

TEST_CASE("fit_expansion round trips", "[analysis]") {
  const auto p = expansion_params();

  SECTION("noiseless synthetic curve recovers the truth to 0.1%") {
    const auto curve = model_curve(p, 170e-12, 1.14e-9, 0.01, kTauGrid);
    const auto fit = fit_expansion(curve, p);
    REQUIRE(fit.converged);
    REQUIRE(fit.parameters(0) == Approx(170e-12).epsilon(1e-3));
    REQUIRE(fit.parameters(1) == Approx(1.14e-9).epsilon(1e-3));
    REQUIRE(fit.residual_norm < 1e-6);
  }

  SECTION("noisy measurement-scale curve recovers within 2 reported sigma") {
    const auto curve = model_curve(p, 170e-12, 1.14e-9, 0.10, kTauGrid, 2024);
    const auto fit = fit_expansion(curve, p);
    REQUIRE(fit.converged);
    const double err0 = std::sqrt(fit.covariance(0, 0));
    const double err1 = std::sqrt(fit.covariance(1, 1));
    REQUIRE(std::abs(fit.parameters(0) - 170e-12) < 2.0 * err0);
    REQUIRE(std::abs(fit.parameters(1) - 1.14e-9) < 2.0 * err1);
    REQUIRE(err1 < 0.3e-9);  // measurement-scale uncertainty, not degenerate
  }

  SECTION("zero shot-to-shot ground truth comes back consistent with zero") {
    const auto curve = model_curve(p, 170e-12, 0.0, 0.01, kTauGrid, 77);
    const auto fit = fit_expansion(curve, p);
    REQUIRE(fit.converged);
    const double err1 = std::sqrt(fit.covariance(1, 1));
    const bool consistent_with_zero =
        fit.parameters(1) <= 2.0 * err1 || fit.parameters(1) < 1e-6 * fit.parameters(0);
    REQUIRE(consistent_with_zero);
    REQUIRE(fit.parameters(0) == Approx(170e-12).epsilon(0.02));
  }

  SECTION("noiseless round trip holds over random measurement-scale ground truths") {
    RandomStream rng(23, 0);
    for (int k = 0; k < 20; ++k) {
      const double s0 = log_uniform_in(rng, 50e-12, 500e-12);
      const double sd = log_uniform_in(rng, 0.2e-9, 5e-9);
      const auto fit = fit_expansion(model_curve(p, s0, sd, 0.05, kTauGrid), p);
      REQUIRE(fit.converged);
      REQUIRE(fit.parameters(0) == Approx(s0).epsilon(1e-3));
      REQUIRE(fit.parameters(1) == Approx(sd).epsilon(1e-3));
    }
  }

  SECTION("accepted LM steps decrease the cost monotonically") {
    const auto curve = model_curve(p, 170e-12, 1.14e-9, 0.10, kTauGrid, 5);
    const auto fit = fit_expansion(curve, p);
    for (size_t i = 1; i < fit.cost_trace.size(); ++i)
      REQUIRE(fit.cost_trace[i] <= fit.cost_trace[i - 1] * (1.0 + 1e-12));
  }

  SECTION("input validation") {
    ExpansionCurve bad;
    bad.points = {{0.0, 1e-10, 1e-12}, {1e-6, 1e-10, 1e-12}};
    REQUIRE_THROWS_AS(fit_expansion(bad, p), std::invalid_argument);  // too few
    bad.points = {{0.0, 1e-10, 1e-12}, {1e-6, 1e-10, 1e-12}, {5e-7, 1e-10, 1e-12}};
    REQUIRE_THROWS_AS(fit_expansion(bad, p), std::invalid_argument);  // not increasing
  }
}

TEST_CASE("fit_noise_budget round trips", "[analysis]") {
  const double mass = 4.4e-18;
  const double sf_true = 10.9e-18, zeta_true = 834e-12;
  const std::vector<double> freqs{5e3, 6e3, 7e3, 8e3, 9.3e3, 11e3, 13e3};

  const auto make_points = [&](double rel_err, uint64_t noise_seed) {
    std::vector<BudgetPoint> pts;
    RandomStream rng(noise_seed, 0);
    for (const double f : freqs) {
      const double w = kTwoPi * f;
      const double k = mass * w * w;
      const double sd = std::hypot(sf_true / k, zeta_true);
      const double err = rel_err * sd;
      pts.push_back({w, noise_seed ? sd + err * rng.next_normal() : sd, err});
    }
    return pts;
  };

  SECTION("noiseless recovery to 0.1%") {
    const auto fit = fit_noise_budget(make_points(0.05, 0), mass);
    REQUIRE(fit.converged);
    REQUIRE(fit.parameters(0) == Approx(sf_true).epsilon(1e-3));
    REQUIRE(fit.parameters(1) == Approx(zeta_true).epsilon(1e-3));
  }

  SECTION("noisy recovery within 2 reported sigma") {
    const auto fit = fit_noise_budget(make_points(0.08, 909), mass);
    REQUIRE(fit.converged);
    REQUIRE(std::abs(fit.parameters(0) - sf_true) < 2.0 * std::sqrt(fit.covariance(0, 0)));
    REQUIRE(std::abs(fit.parameters(1) - zeta_true) < 2.0 * std::sqrt(fit.covariance(1, 1)));
  }

  SECTION("noiseless round trip over random ground truths") {
    RandomStream rng(24, 0);
    for (int k = 0; k < 20; ++k) {
      const double sf = log_uniform_in(rng, 1e-18, 1e-16);
      const double zeta = log_uniform_in(rng, 100e-12, 3e-9);
      std::vector<BudgetPoint> pts;
      for (const double f : freqs) {
        const double w = kTwoPi * f;
        const double sd = std::hypot(sf / (mass * w * w), zeta);
        pts.push_back({w, sd, 0.05 * sd});
      }
      const auto fit = fit_noise_budget(pts, mass);
      REQUIRE(fit.converged);
      REQUIRE(fit.parameters(0) == Approx(sf).epsilon(1e-3));
      REQUIRE(fit.parameters(1) == Approx(zeta).epsilon(1e-3));
    }
  }

  SECTION("force term dominates at low frequency, chip term at high") {
    const auto fit = fit_noise_budget(make_points(0.02, 0), mass);
    const double k_lo = mass * std::pow(kTwoPi * freqs.front(), 2);
    const double k_hi = mass * std::pow(kTwoPi * freqs.back(), 2);
    REQUIRE(fit.parameters(0) / k_lo > fit.parameters(1));
    REQUIRE(fit.parameters(0) / k_hi < fit.parameters(1));
  }

  SECTION("flat data: zero stray force, chip term equals the plateau") {
    std::vector<BudgetPoint> pts;
    for (const double f : freqs) pts.push_back({kTwoPi * f, zeta_true, 0.05 * zeta_true});
    const auto fit = fit_noise_budget(pts, mass);
    REQUIRE(fit.parameters(1) == Approx(zeta_true).epsilon(1e-3));
    const bool sf_zeroish = fit.parameters(0) <= 2.0 * std::sqrt(fit.covariance(0, 0)) ||
                            fit.parameters(0) / (mass * std::pow(kTwoPi * freqs.front(), 2)) <
                                1e-6 * zeta_true;
    REQUIRE(sf_zeroish);
  }

  SECTION("degenerate design rejected") {
    std::vector<BudgetPoint> pts{{kTwoPi * 5e3, 1e-9, 1e-10}, {kTwoPi * 5e3, 1.1e-9, 1e-10}};
    REQUIRE_THROWS_AS(fit_noise_budget(pts, mass), std::invalid_argument);
  }
}

TEST_CASE("ximax_map and contours", "[analysis]") {
  PhysicalParams p = groundstate_params();
  const InitialState init{7e-12};

  const auto sd_grid = log_spaced(1e-13, 1e-8, 18);
  const auto gamma_grid = log_spaced(kTwoPi * 0.01, kTwoPi * 1e5, 12);
  const auto map = ximax_map(sd_grid, gamma_grid, p, init, 2);

  SECTION("monotone non-increasing along both axes") {
    for (size_t g = 0; g < map.gamma_values.size(); ++g)
      for (size_t s = 0; s + 1 < map.sigma_disp_values.size(); ++s)
        REQUIRE(map.at(g, s + 1) <= map.at(g, s) * (1.0 + 1e-9));
    for (size_t s = 0; s < map.sigma_disp_values.size(); ++s)
      for (size_t g = 0; g + 1 < map.gamma_values.size(); ++g)
        REQUIRE(map.at(g + 1, s) <= map.at(g, s) * (1.0 + 1e-9));
  }

  SECTION("deterministic across worker counts") {
    const auto again = ximax_map(sd_grid, gamma_grid, p, init, 1);
    REQUIRE(map.xi == again.xi);
    REQUIRE(map.tau_star == again.tau_star);
  }

  SECTION("contour points evaluate to the level") {
    const double level = 1e-10;
    const auto contour = extract_contour(map, level);
    REQUIRE(contour.size() > 3);
    for (const auto& pt : contour) {
      PhysicalParams q = p;
      q.heating_rate = pt.gamma;
      const double xi = xi_max(q, init, pt.sigma_disp).xi;
      REQUIRE(xi / level > 0.6);
      REQUIRE(xi / level < 1.7);
    }
  }

  SECTION("single-cell map") {
    const auto tiny = ximax_map({1e-12}, {kTwoPi}, p, init, 1);
    REQUIRE(tiny.xi.size() == 1);
    REQUIRE(tiny.xi[0] > 0.0);
  }
}

TEST_CASE("scaling_check", "[analysis]") {
  PhysicalParams p = groundstate_params();
  const InitialState init{7e-12};

  SECTION("tenfold displacement and hundredfold heating gain about an order of magnitude") {
    const auto report = scaling_check(p, init, 0.5e-12, kTwoPi * 1.0);
    REQUIRE(report.ratio == Approx(9.98).epsilon(0.02));
    REQUIRE(report.within_expected);
  }

  SECTION("identity factors give exactly ratio 1") {
    const auto report = scaling_check(p, init, 0.5e-12, kTwoPi * 1.0, 1.0, 1.0);
    REQUIRE(report.ratio == 1.0);
  }
}
