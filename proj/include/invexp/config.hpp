#pragma once

// Run configuration: a JSON file mirroring the physical parameters, protocol
// timeline, noise inputs, and per-command settings. Validation is strict:
// unknown keys are rejected with path-qualified messages, frequencies are
// ordinary frequencies in Hz and converted to angular rates exactly once,
// here. resolved() reserializes everything actually in effect so outputs can
// carry their provenance.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "invexp/montecarlo.hpp"
#include "invexp/types.hpp"

namespace invexp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

using Json = nlohmann::ordered_json;

inline void check_keys(const Json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config error at " + path + ": expected an object");
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      throw ConfigError("config error at " + path + ": unknown key '" + item.key() + "'");
}

inline double get_number(const Json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) throw ConfigError("config error at " + path + ": missing required key '" + key + "'");
  if (!obj[key].is_number()) throw ConfigError("config error at " + path + "." + key + ": expected a number");
  return obj[key].get<double>();
}

inline double get_number_or(const Json& obj, const std::string& path, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ConfigError("config error at " + path + "." + key + ": expected a number");
  return obj[key].get<double>();
}

inline int64_t get_integer_or(const Json& obj, const std::string& path, const std::string& key, int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) throw ConfigError("config error at " + path + "." + key + ": expected an integer");
  return obj[key].get<int64_t>();
}

}  // namespace detail

struct PredictConfig {
  double tau_min = 0.0;
  double tau_max = 0.0;
  int n_tau = 0;
};

struct MapMarker {
  double sigma_disp = 0.0;  // m
  double gamma = 0.0;       // rad/s
};

struct MapConfig {
  double sigma_disp_min = 0.0, sigma_disp_max = 0.0;
  int n_sigma_disp = 0;
  double gamma_min = 0.0, gamma_max = 0.0;  // rad/s
  int n_gamma = 0;
  std::vector<double> contour_levels{1e-12, 1e-11, 1e-10, 1e-9};
  std::vector<MapMarker> markers;
  std::optional<MapMarker> scaling_base;
};

struct RequirementsConfig {
  double target_gamma = 0.0;  // rad/s
  double tau_ex = 0.0;        // s
  double sigma_target = 0.0;  // m
};

struct MonteCarloConfig {
  int64_t n_shots = 200;
  std::vector<double> tau_list;
  int n_steps = 64;
  double detector_noise_psd = 1e-26;  // m^2/Hz
  double feedback_damping = 0.0;      // rad/s
};

struct FitConfig {
  int multistart = 8;
  int max_iterations = 200;
};

struct RunConfig {
  PhysicalParams physical;
  std::optional<InitialState> initial;
  std::optional<double> sigma_disp;
  std::optional<NoiseBudget> budget;
  ProtocolTimeline timeline;
  MonteCarloConfig montecarlo;
  std::optional<PredictConfig> predict;
  std::optional<MapConfig> map;
  std::optional<RequirementsConfig> requirements;
  FitConfig fit;
  uint64_t seed = 0;
  std::string out_dir = ".";

  static RunConfig parse(const detail::Json& root);
  static RunConfig load(const std::string& path);

  /// Displacement spread for the closed-form model; requires noise config.
  double require_sigma_disp() const {
    if (sigma_disp) return *sigma_disp;
    if (budget) return sigma_disp_from_budget(*budget, physical);
    throw ConfigError("config error at noise: need sigma_disp_m or a budget");
  }

  InitialState require_initial() const {
    if (!initial) throw ConfigError("config error at initial: section required for this command");
    return *initial;
  }

  ShotConfig shot_config(double tau) const {
    ShotConfig sc;
    sc.params = physical;
    sc.init = require_initial();
    sc.budget = budget;
    sc.sigma_disp = sigma_disp.value_or(0.0);
    sc.timeline = timeline;
    sc.timeline.tau = tau;
    sc.feedback_damping = montecarlo.feedback_damping;
    sc.detector_noise_psd = montecarlo.detector_noise_psd;
    sc.seed = seed;
    sc.n_steps = montecarlo.n_steps;
    return sc;
  }

  detail::Json resolved() const;
};

inline RunConfig RunConfig::parse(const detail::Json& root) {
  using detail::check_keys;
  using detail::get_integer_or;
  using detail::get_number;
  using detail::get_number_or;
  const double two_pi = 2.0 * kPi;

  check_keys(root, "config",
             {"physical", "initial", "noise", "timeline", "montecarlo", "predict", "map",
              "requirements", "fit", "seed", "out_dir"});

  RunConfig cfg;
  if (!root.contains("physical")) throw ConfigError("config error at config: missing required key 'physical'");
  {
    const auto& p = root["physical"];
    check_keys(p, "physical",
               {"mass_kg", "f_trap_hz", "f_inv_hz", "heating_rate_hz", "hbar_js", "charge_c",
                "electrode_distance_m"});
    cfg.physical.mass = get_number(p, "physical", "mass_kg");
    cfg.physical.omega_trap = two_pi * get_number(p, "physical", "f_trap_hz");
    cfg.physical.omega_inv = two_pi * get_number(p, "physical", "f_inv_hz");
    cfg.physical.heating_rate = two_pi * get_number(p, "physical", "heating_rate_hz");
    cfg.physical.hbar = get_number_or(p, "physical", "hbar_js", kHbar);
    cfg.physical.charge = get_number_or(p, "physical", "charge_c", 0.0);
    cfg.physical.electrode_distance = get_number_or(p, "physical", "electrode_distance_m", 0.0);
    try {
      cfg.physical.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config error at physical: ") + e.what());
    }
  }

  if (root.contains("initial")) {
    const auto& s = root["initial"];
    check_keys(s, "initial", {"sigma0_m"});
    InitialState init;
    init.sigma_0 = get_number(s, "initial", "sigma0_m");
    try {
      init.validate(cfg.physical);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config error at initial: ") + e.what());
    }
    cfg.initial = init;
  }

  if (root.contains("noise")) {
    const auto& s = root["noise"];
    check_keys(s, "noise", {"sigma_disp_m", "sigma_sf_n", "sigma_zeta_m"});
    const bool direct = s.contains("sigma_disp_m");
    const bool budget = s.contains("sigma_sf_n") || s.contains("sigma_zeta_m");
    if (direct && budget)
      throw ConfigError("config error at noise: give either sigma_disp_m or the sigma_sf_n/sigma_zeta_m pair, not both");
    if (direct) {
      cfg.sigma_disp = get_number(s, "noise", "sigma_disp_m");
      if (!(*cfg.sigma_disp >= 0.0)) throw ConfigError("config error at noise.sigma_disp_m: must be >= 0");
    } else if (budget) {
      NoiseBudget b;
      b.sigma_sf = get_number(s, "noise", "sigma_sf_n");
      b.sigma_zeta = get_number(s, "noise", "sigma_zeta_m");
      try {
        b.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config error at noise: ") + e.what());
      }
      cfg.budget = b;
    }
  }

  if (root.contains("timeline")) {
    const auto& s = root["timeline"];
    check_keys(s, "timeline", {"t_fb_off_s", "recapture_duration_s", "sample_rate_hz"});
    cfg.timeline.t_fb_off = get_number_or(s, "timeline", "t_fb_off_s", cfg.timeline.t_fb_off);
    cfg.timeline.recapture_duration =
        get_number_or(s, "timeline", "recapture_duration_s", cfg.timeline.recapture_duration);
    cfg.timeline.sample_rate = get_number_or(s, "timeline", "sample_rate_hz", cfg.timeline.sample_rate);
  }

  if (root.contains("montecarlo")) {
    const auto& s = root["montecarlo"];
    check_keys(s, "montecarlo",
               {"n_shots", "tau_list_s", "n_steps", "detector_noise_psd_m2_hz", "feedback_damping_hz"});
    cfg.montecarlo.n_shots = get_integer_or(s, "montecarlo", "n_shots", cfg.montecarlo.n_shots);
    if (s.contains("tau_list_s")) {
      if (!s["tau_list_s"].is_array()) throw ConfigError("config error at montecarlo.tau_list_s: expected an array");
      for (const auto& v : s["tau_list_s"]) {
        if (!v.is_number()) throw ConfigError("config error at montecarlo.tau_list_s: expected numbers");
        cfg.montecarlo.tau_list.push_back(v.get<double>());
      }
    }
    cfg.montecarlo.n_steps = static_cast<int>(get_integer_or(s, "montecarlo", "n_steps", cfg.montecarlo.n_steps));
    cfg.montecarlo.detector_noise_psd =
        get_number_or(s, "montecarlo", "detector_noise_psd_m2_hz", cfg.montecarlo.detector_noise_psd);
    cfg.montecarlo.feedback_damping = two_pi * get_number_or(s, "montecarlo", "feedback_damping_hz", 0.0);
  }

  if (root.contains("predict")) {
    const auto& s = root["predict"];
    check_keys(s, "predict", {"tau_min_s", "tau_max_s", "n_tau"});
    PredictConfig p;
    p.tau_min = get_number(s, "predict", "tau_min_s");
    p.tau_max = get_number(s, "predict", "tau_max_s");
    p.n_tau = static_cast<int>(get_integer_or(s, "predict", "n_tau", 101));
    if (!(p.tau_max > p.tau_min) || p.n_tau < 2)
      throw ConfigError("config error at predict: need tau_max_s > tau_min_s and n_tau >= 2");
    cfg.predict = p;
  }

  if (root.contains("map")) {
    const auto& s = root["map"];
    check_keys(s, "map",
               {"sigma_disp_min_m", "sigma_disp_max_m", "n_sigma_disp", "gamma_min_hz", "gamma_max_hz",
                "n_gamma", "contour_levels_m", "markers", "scaling_base"});
    MapConfig m;
    m.sigma_disp_min = get_number(s, "map", "sigma_disp_min_m");
    m.sigma_disp_max = get_number(s, "map", "sigma_disp_max_m");
    m.n_sigma_disp = static_cast<int>(get_integer_or(s, "map", "n_sigma_disp", 50));
    m.gamma_min = two_pi * get_number(s, "map", "gamma_min_hz");
    m.gamma_max = two_pi * get_number(s, "map", "gamma_max_hz");
    m.n_gamma = static_cast<int>(get_integer_or(s, "map", "n_gamma", 50));
    if (!(m.sigma_disp_min > 0.0) || !(m.sigma_disp_max > m.sigma_disp_min) || m.n_sigma_disp < 1 ||
        !(m.gamma_min > 0.0) || !(m.gamma_max > m.gamma_min) || m.n_gamma < 1)
      throw ConfigError("config error at map: need positive ascending ranges and sizes >= 1");
    if (s.contains("contour_levels_m")) {
      m.contour_levels.clear();
      for (const auto& v : s["contour_levels_m"]) {
        if (!v.is_number()) throw ConfigError("config error at map.contour_levels_m: expected numbers");
        m.contour_levels.push_back(v.get<double>());
      }
    }
    if (s.contains("markers")) {
      if (!s["markers"].is_array()) throw ConfigError("config error at map.markers: expected an array");
      for (const auto& v : s["markers"]) {
        check_keys(v, "map.markers[]", {"sigma_disp_m", "gamma_hz"});
        m.markers.push_back({get_number(v, "map.markers[]", "sigma_disp_m"),
                             two_pi * get_number(v, "map.markers[]", "gamma_hz")});
      }
    }
    if (s.contains("scaling_base")) {
      const auto& v = s["scaling_base"];
      check_keys(v, "map.scaling_base", {"sigma_disp_m", "gamma_hz"});
      m.scaling_base = MapMarker{get_number(v, "map.scaling_base", "sigma_disp_m"),
                                 two_pi * get_number(v, "map.scaling_base", "gamma_hz")};
    }
    cfg.map = m;
  }

  if (root.contains("requirements")) {
    const auto& s = root["requirements"];
    check_keys(s, "requirements", {"target_gamma_hz", "tau_ex_s", "sigma_target_m"});
    RequirementsConfig r;
    r.target_gamma = two_pi * get_number(s, "requirements", "target_gamma_hz");
    r.tau_ex = get_number(s, "requirements", "tau_ex_s");
    r.sigma_target = get_number(s, "requirements", "sigma_target_m");
    cfg.requirements = r;
  }

  if (root.contains("fit")) {
    const auto& s = root["fit"];
    check_keys(s, "fit", {"multistart", "max_iterations"});
    cfg.fit.multistart = static_cast<int>(get_integer_or(s, "fit", "multistart", 8));
    cfg.fit.max_iterations = static_cast<int>(get_integer_or(s, "fit", "max_iterations", 200));
  }

  if (root.contains("seed")) {
    if (!root["seed"].is_number_integer()) throw ConfigError("config error at seed: expected an integer");
    cfg.seed = root["seed"].get<uint64_t>();
  }
  if (root.contains("out_dir")) {
    if (!root["out_dir"].is_string()) throw ConfigError("config error at out_dir: expected a string");
    cfg.out_dir = root["out_dir"].get<std::string>();
  }
  return cfg;
}

inline RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  detail::Json root;
  try {
    root = detail::Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config error: invalid JSON in " + path + ": " + e.what());
  }
  return parse(root);
}

inline detail::Json RunConfig::resolved() const {
  const double two_pi = 2.0 * kPi;
  detail::Json j;
  j["physical"] = {{"mass_kg", physical.mass},
                   {"f_trap_hz", physical.omega_trap / two_pi},
                   {"f_inv_hz", physical.omega_inv / two_pi},
                   {"heating_rate_hz", physical.heating_rate / two_pi},
                   {"hbar_js", physical.hbar}};
  if (physical.charge > 0.0) j["physical"]["charge_c"] = physical.charge;
  if (physical.electrode_distance > 0.0) j["physical"]["electrode_distance_m"] = physical.electrode_distance;
  if (initial) j["initial"] = {{"sigma0_m", initial->sigma_0}};
  if (sigma_disp) j["noise"] = {{"sigma_disp_m", *sigma_disp}};
  if (budget) j["noise"] = {{"sigma_sf_n", budget->sigma_sf}, {"sigma_zeta_m", budget->sigma_zeta}};
  j["timeline"] = {{"t_fb_off_s", timeline.t_fb_off},
                   {"recapture_duration_s", timeline.recapture_duration},
                   {"sample_rate_hz", timeline.sample_rate}};
  j["montecarlo"] = {{"n_shots", montecarlo.n_shots},
                     {"tau_list_s", montecarlo.tau_list},
                     {"n_steps", montecarlo.n_steps},
                     {"detector_noise_psd_m2_hz", montecarlo.detector_noise_psd},
                     {"feedback_damping_hz", montecarlo.feedback_damping / two_pi}};
  if (predict)
    j["predict"] = {{"tau_min_s", predict->tau_min}, {"tau_max_s", predict->tau_max}, {"n_tau", predict->n_tau}};
  if (map) {
    j["map"] = {{"sigma_disp_min_m", map->sigma_disp_min},
                {"sigma_disp_max_m", map->sigma_disp_max},
                {"n_sigma_disp", map->n_sigma_disp},
                {"gamma_min_hz", map->gamma_min / two_pi},
                {"gamma_max_hz", map->gamma_max / two_pi},
                {"n_gamma", map->n_gamma},
                {"contour_levels_m", map->contour_levels}};
    if (!map->markers.empty()) {
      auto arr = detail::Json::array();
      for (const auto& mk : map->markers)
        arr.push_back({{"sigma_disp_m", mk.sigma_disp}, {"gamma_hz", mk.gamma / two_pi}});
      j["map"]["markers"] = arr;
    }
    if (map->scaling_base)
      j["map"]["scaling_base"] = {{"sigma_disp_m", map->scaling_base->sigma_disp},
                                  {"gamma_hz", map->scaling_base->gamma / two_pi}};
  }
  if (requirements)
    j["requirements"] = {{"target_gamma_hz", requirements->target_gamma / two_pi},
                         {"tau_ex_s", requirements->tau_ex},
                         {"sigma_target_m", requirements->sigma_target}};
  j["fit"] = {{"multistart", fit.multistart}, {"max_iterations", fit.max_iterations}};
  j["seed"] = seed;
  // out_dir deliberately not echoed: results must not depend on where they land.
  return j;
}

}  // namespace invexp
