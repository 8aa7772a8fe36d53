#pragma once

// Per-shot stochastic simulator of the three-phase protocol. Each shot draws
// its misalignment and initial state, then evolves through exact
// conditional-Gaussian steps (Van Loan discretization, no integrator error).
// Serves as the brute-force oracle for the closed forms in model.hpp and as
// the generator of synthetic detector traces.
//
// Frames: the misalignment d shifts the combined-trap equilibrium to
// z_eq = -d/r^2 (relative to the optical center) and the inverted-potential
// apex sits at d. All reported coordinates are relative to the per-shot
// combined-trap equilibrium, which is what makes the shot-to-shot variance
// vanish at tau = 0.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "invexp/discretize.hpp"
#include "invexp/model.hpp"
#include "invexp/rng.hpp"
#include "invexp/parallel.hpp"
#include "invexp/stats.hpp"
#include "invexp/types.hpp"

namespace invexp {

struct ProtocolTimeline {
  double t_fb_off = 1e-6;          // feedback off before release, s
  double tau = 0.0;                // inverted-potential evolution, s
  double recapture_duration = 0.0; // measured phase (iii) window, s
  double sample_rate = 0.0;        // detector sampling, Hz

  void validate(const PhysicalParams& params, bool with_trace) const {
    if (!(t_fb_off >= 0.0) || !(tau >= 0.0) || !(recapture_duration >= 0.0))
      throw std::invalid_argument("ProtocolTimeline: durations must be >= 0");
    if (with_trace && !(sample_rate > 2.0 * params.omega_trap / (2.0 * kPi)))
      throw std::invalid_argument("ProtocolTimeline: sample_rate below Nyquist for the trap line");
  }
};

struct ShotConfig {
  PhysicalParams params;
  InitialState init;
  /// Either a budget (stray force + chip position, drawn independently) or a
  /// direct displacement spread; exactly one is used.
  std::optional<NoiseBudget> budget;
  double sigma_disp = 0.0;
  ProtocolTimeline timeline;
  double feedback_damping = 0.0;    // gamma_fb, rad/s (phase (i) cooling)
  double detector_noise_psd = 0.0;  // one-sided, m^2/Hz
  uint64_t seed = 0;
  int n_steps = 64;                 // exact steps across phase (ii)

  void validate(bool with_trace = false) const {
    params.validate();
    init.validate(params);
    if (budget) budget->validate();
    if (!(sigma_disp >= 0.0)) throw std::invalid_argument("ShotConfig: sigma_disp must be >= 0");
    if (!(feedback_damping >= 0.0) || !(detector_noise_psd >= 0.0))
      throw std::invalid_argument("ShotConfig: rates and PSDs must be >= 0");
    if (n_steps < 1) throw std::invalid_argument("ShotConfig: n_steps must be >= 1");
    timeline.validate(params, with_trace);
    detail::guard_expansion(params.omega_inv, timeline.tau);
  }

  /// Displacement spread implied by the configuration.
  double effective_sigma_disp() const {
    return budget ? sigma_disp_from_budget(*budget, params) : sigma_disp;
  }
};

struct ShotRecord {
  int64_t shot_index = 0;
  double displacement = 0.0;  // drawn misalignment d, m
  double initial_z = 0.0;     // relative to the per-shot equilibrium
  double initial_p = 0.0;
  double final_z = 0.0;       // true state at recapture time tau
  double final_p = 0.0;
  std::vector<double> trace;  // sampled noisy positions, phase (iii)
};

namespace detail {

/// Step operators shared by all shots of one configuration.
struct ShotPlan {
  DiscreteLinearSde invert;   // phase (ii), per sub-step
  DiscreteLinearSde hold;     // t_fb_off in the trap, single exact step
  DiscreteLinearSde record;   // phase (iii), per sample interval
  int64_t n_samples = 0;
  double detector_sigma = 0.0;
  double equilibrium_per_d = 0.0;  // z_eq = -d/r^2
};

inline ShotPlan make_plan(const ShotConfig& config, bool with_trace) {
  const auto& p = config.params;
  const double q = force_noise_intensity(p);
  ShotPlan plan;
  plan.invert = discretize_sde(oscillator_drift(p.mass, -p.omega_inv * p.omega_inv),
                               force_noise_cov(q), config.timeline.tau / config.n_steps);
  if (config.timeline.t_fb_off > 0.0)
    plan.hold = discretize_sde(oscillator_drift(p.mass, p.omega_trap * p.omega_trap),
                               force_noise_cov(q), config.timeline.t_fb_off);
  if (with_trace) {
    plan.record = discretize_sde(oscillator_drift(p.mass, p.omega_trap * p.omega_trap),
                                 force_noise_cov(q), 1.0 / config.timeline.sample_rate);
    plan.n_samples = static_cast<int64_t>(
        std::llround(config.timeline.recapture_duration * config.timeline.sample_rate));
    plan.detector_sigma =
        std::sqrt(config.detector_noise_psd * config.timeline.sample_rate / 2.0);
  }
  const double r = p.ratio();
  plan.equilibrium_per_d = -1.0 / (r * r);
  return plan;
}

inline ShotRecord draw_shot_planned(const ShotConfig& config, const ShotPlan& plan,
                                    int64_t shot_index, bool with_trace) {
  RandomStream rng(config.seed, static_cast<uint64_t>(shot_index), /*domain=*/0);

  ShotRecord rec;
  rec.shot_index = shot_index;

  const auto& p = config.params;
  if (config.budget) {
    const double spring = p.mass * p.omega_inv * p.omega_inv;
    rec.displacement = (config.budget->sigma_sf / spring) * rng.next_normal() +
                       config.budget->sigma_zeta * rng.next_normal();
  } else {
    rec.displacement = config.sigma_disp * rng.next_normal();
  }

  const double z_eq = plan.equilibrium_per_d * rec.displacement;

  // Thermal initial state around the shifted equilibrium (optical-center frame).
  Eigen::Vector2d x{z_eq + config.init.sigma_0 * rng.next_normal(),
                    p.mass * p.omega_trap * config.init.sigma_0 * rng.next_normal()};
  if (config.timeline.t_fb_off > 0.0) {
    Eigen::Vector2d w{x(0) - z_eq, x(1)};
    w = plan.hold.step(w, rng);
    x = {w(0) + z_eq, w(1)};
  }
  rec.initial_z = x(0) - z_eq;
  rec.initial_p = x(1);

  // Phase (ii): evolve relative to the inverted-potential apex at d.
  Eigen::Vector2d w{x(0) - rec.displacement, x(1)};
  for (int s = 0; s < config.n_steps; ++s) w = plan.invert.step(w, rng);
  x = {w(0) + rec.displacement, w(1)};

  rec.final_z = x(0) - z_eq;
  rec.final_p = x(1);

  if (with_trace && plan.n_samples > 0) {
    RandomStream trace_rng(config.seed, static_cast<uint64_t>(shot_index), /*domain=*/1);
    rec.trace.resize(plan.n_samples);
    Eigen::Vector2d y{rec.final_z, rec.final_p};
    for (int64_t k = 0; k < plan.n_samples; ++k) {
      rec.trace[k] = y(0) + plan.detector_sigma * trace_rng.next_normal();
      y = plan.record.step(y, trace_rng);
    }
  }
  return rec;
}

}  // namespace detail

/// One realization of the full protocol.
inline ShotRecord draw_shot(const ShotConfig& config, int64_t shot_index, bool with_trace = false) {
  config.validate(with_trace);
  return detail::draw_shot_planned(config, detail::make_plan(config, with_trace), shot_index,
                                   with_trace);
}

/// Regenerates the phase (iii) trace for an existing record; identical to the
/// trace draw_shot would have produced (separate RNG domain).
inline std::vector<double> simulate_recapture_trace(const ShotRecord& record,
                                                    const ShotConfig& config) {
  config.validate(true);
  const auto plan = detail::make_plan(config, true);
  RandomStream trace_rng(config.seed, static_cast<uint64_t>(record.shot_index), /*domain=*/1);
  std::vector<double> trace(plan.n_samples);
  Eigen::Vector2d y{record.final_z, record.final_p};
  for (int64_t k = 0; k < plan.n_samples; ++k) {
    trace[k] = y(0) + plan.detector_sigma * trace_rng.next_normal();
    y = plan.record.step(y, trace_rng);
  }
  return trace;
}

struct EnsembleRun {
  std::vector<ShotRecord> records;
  EnsembleStats stats;
};

/// Runs n_shots independent realizations. Results are bit-identical for any
/// worker count: every shot owns a counter-based stream keyed by its index.
inline EnsembleRun run_ensemble(const ShotConfig& config, int64_t n_shots, int n_threads = 1,
                                bool with_traces = false, int bootstrap_resamples = 1000) {
  if (n_shots < 2) throw std::invalid_argument("run_ensemble: n_shots must be >= 2");
  config.validate(with_traces);
  const auto plan = detail::make_plan(config, with_traces);

  EnsembleRun run;
  run.records.resize(n_shots);
  parallel_for(n_shots, n_threads, [&](int64_t i) {
    run.records[i] = detail::draw_shot_planned(config, plan, i, with_traces);
  });

  std::vector<PhaseSample> samples(n_shots);
  for (int64_t i = 0; i < n_shots; ++i) samples[i] = {run.records[i].final_z, run.records[i].final_p};
  StatsOptions opts;
  opts.bootstrap_resamples = bootstrap_resamples;
  opts.bootstrap_seed = mix_seed(config.seed, 0xB007);
  opts.hbar = config.params.hbar;
  opts.n_threads = n_threads;
  run.stats = compute_stats(samples, opts);
  return run;
}

/// Cold-damping gain realizing a requested steady-state sigma_0:
/// gamma_fb = hbar Gamma / (2 m omega_trap sigma_0^2).
inline double feedback_gain_for_sigma0(const PhysicalParams& params, double sigma_0) {
  if (!(sigma_0 > 0.0)) throw std::invalid_argument("sigma_0 must be > 0");
  return params.hbar * params.heating_rate / (2.0 * params.mass * params.omega_trap * sigma_0 * sigma_0);
}

/// Samples the phase (i) cooled state: exact discretization of the damped,
/// heated oscillator (p' = -m w_o^2 z - 2 gamma_fb p + noise) from rest.
/// Steady-state position variance is hbar Gamma / (2 m w_o gamma_fb).
inline PhaseSample simulate_phase1_cooling(const ShotConfig& config, double duration,
                                           int64_t sample_index = 0, PhaseSample initial = {}) {
  config.params.validate();
  if (!(config.feedback_damping > 0.0))
    throw std::invalid_argument("simulate_phase1_cooling: feedback_damping must be > 0");
  const auto& p = config.params;
  // Substep short enough to keep the Van Loan exponential well scaled.
  const double dt_target = 0.5 / p.omega_trap;
  const int n = std::max<int>(1, static_cast<int>(std::ceil(duration / dt_target)));
  const auto sde = discretize_sde(
      oscillator_drift(p.mass, p.omega_trap * p.omega_trap, 2.0 * config.feedback_damping),
      force_noise_cov(detail::force_noise_intensity(p)), duration / n);
  RandomStream rng(config.seed, static_cast<uint64_t>(sample_index), /*domain=*/3);
  Eigen::Vector2d x{initial.z, initial.p};
  for (int i = 0; i < n; ++i) x = sde.step(x, rng);
  return {x(0), x(1)};
}

}  // namespace invexp
