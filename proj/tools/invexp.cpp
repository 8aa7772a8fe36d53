// invexp: simulate, estimate, and fit motional-state expansion of a trapped
// particle released into an inverted potential. Subcommands produce
// figure-ready CSV plus JSON results that embed the resolved configuration.
//
// Exit codes: 0 success, 2 config error, 3 fit non-convergence,
// 4 numeric domain error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "invexp/config.hpp"
#include "invexp/csvio.hpp"
#include "invexp/fit.hpp"
#include "invexp/mapgrid.hpp"
#include "invexp/model.hpp"
#include "invexp/montecarlo.hpp"
#include "invexp/retrodiction.hpp"
#include "invexp/stats.hpp"

namespace fs = std::filesystem;
using invexp::RunConfig;
using Json = nlohmann::ordered_json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;           // overrides config when set
  std::optional<uint64_t> seed;  // overrides config when set
  int threads = 0;               // 0 = hardware concurrency
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_threads = true) {
  cmd->add_option("-c,--config", args.config_path, "JSON run configuration")->required();
  cmd->add_option("-o,--out", args.out_dir, "output directory (overrides config out_dir)");
  cmd->add_option("--seed", args.seed, "RNG seed (overrides config seed)");
  if (with_threads) cmd->add_option("--threads", args.threads, "worker threads (0 = all cores)");
}

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::load(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  fs::create_directories(cfg.out_dir);
  return cfg;
}

// Input-file problems are invocation errors (exit 2), same as bad configs.
invexp::CsvTable read_table(const std::string& path, const std::vector<std::string>& required) {
  try {
    auto table = invexp::CsvTable::read(path);
    for (const auto& name : required)
      if (table.column_index(name) < 0)
        throw std::runtime_error(path + ": missing column '" + name + "'");
    return table;
  } catch (const std::exception& e) {
    throw invexp::ConfigError(e.what());
  }
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

Json fit_to_json(const invexp::FitResult& fit, const std::vector<std::string>& names) {
  Json j;
  for (size_t i = 0; i < names.size(); ++i) j["parameters"][names[i]] = fit.parameters(i);
  for (size_t i = 0; i < names.size(); ++i)
    j["standard_errors"][names[i]] = std::sqrt(std::max(fit.covariance(i, i), 0.0));
  j["covariance"] = Json::array();
  for (size_t i = 0; i < names.size(); ++i) {
    Json row = Json::array();
    for (size_t k = 0; k < names.size(); ++k) row.push_back(fit.covariance(i, k));
    j["covariance"].push_back(row);
  }
  j["residual_norm"] = fit.residual_norm;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["weighting"] = fit.weighting;
  return j;
}

int cmd_predict(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  if (!cfg.predict) throw invexp::ConfigError("config error at predict: section required");
  const auto init = cfg.require_initial();
  const double sigma_disp = cfg.require_sigma_disp();
  const auto& grid = *cfg.predict;

  const double sigma0_sq = init.sigma_0 * init.sigma_0;
  invexp::CsvWriter csv((fs::path(cfg.out_dir) / "predict.csv").string(),
                        {"tau_s", "sigma_z_m", "sigma_z_wnonly_m", "xi_m", "xi_wnonly_m",
                         "variance_gain_db"});
  for (int i = 0; i < grid.n_tau; ++i) {
    const double tau = grid.tau_min + (grid.tau_max - grid.tau_min) * i / (grid.n_tau - 1);
    const auto full = invexp::ensemble_state(cfg.physical, init, sigma_disp, tau);
    const auto wn_only = invexp::ensemble_state(cfg.physical, init, 0.0, tau);
    csv.row({tau, std::sqrt(full.var_z), std::sqrt(wn_only.var_z),
             invexp::xi_of_tau(cfg.physical, init, sigma_disp, tau),
             invexp::xi_of_tau(cfg.physical, init, 0.0, tau),
             10.0 * std::log10(full.var_z / sigma0_sq)});
  }

  Json manifest;
  manifest["command"] = "predict";
  manifest["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "predict.json", manifest);
  return 0;
}

int cmd_simulate(const CommonArgs& args, bool with_traces, bool retrodict) {
  RunConfig cfg = load_config(args);
  if (cfg.montecarlo.tau_list.empty())
    throw invexp::ConfigError("config error at montecarlo.tau_list_s: at least one tau required");
  const bool need_traces = with_traces || retrodict;
  if (need_traces && !(cfg.timeline.recapture_duration > 0.0 && cfg.timeline.sample_rate > 0.0))
    throw invexp::ConfigError(
        "config error at timeline: recapture_duration_s and sample_rate_hz required for traces");

  invexp::CsvWriter shots_csv((fs::path(cfg.out_dir) / "shots.csv").string(),
                              {"tau_s", "shot_index", "displacement_m", "initial_z_m",
                               "initial_p_kgms", "final_z_m", "final_p_kgms"});
  invexp::CsvWriter stats_csv(
      (fs::path(cfg.out_dir) / "stats.csv").string(),
      {"tau_s", "n_shots", "mean_z_m", "mean_z_err_m", "mean_p_kgms", "mean_p_err_kgms",
       "sigma_z_m", "sigma_z_err_m", "sigma_p_kgms", "sigma_p_err_kgms", "cov_zp_kgm2s",
       "cov_zp_err_kgm2s", "purity", "purity_err", "xi_m", "xi_err_m"});
  std::optional<invexp::CsvWriter> trace_csv;
  if (with_traces)
    trace_csv.emplace((fs::path(cfg.out_dir) / "traces.csv").string(),
                      std::vector<std::string>{"tau_s", "shot_index", "time_s", "position_m"});
  std::optional<invexp::CsvWriter> retro_csv;
  if (retrodict)
    retro_csv.emplace(
        (fs::path(cfg.out_dir) / "stats_retrodicted.csv").string(),
        std::vector<std::string>{"tau_s", "n_shots", "mean_z_m", "mean_z_err_m", "mean_p_kgms",
                                 "mean_p_err_kgms", "sigma_z_m", "sigma_z_err_m", "sigma_p_kgms",
                                 "sigma_p_err_kgms", "cov_zp_kgm2s", "cov_zp_err_kgm2s", "purity",
                                 "purity_err", "xi_m", "xi_err_m"});

  Json estimates = Json::array();
  Json summary = Json::array();
  const auto stats_row = [](double tau, const invexp::EnsembleStats& st) {
    return std::vector<double>{tau, static_cast<double>(st.n_shots), st.mean_z, st.mean_z_err,
                               st.mean_p, st.mean_p_err, st.sigma_z, st.sigma_z_err, st.sigma_p,
                               st.sigma_p_err, st.cov_zp, st.cov_zp_err, st.purity, st.purity_err,
                               st.xi, st.xi_err};
  };

  for (const double tau : cfg.montecarlo.tau_list) {
    const auto shot_cfg = cfg.shot_config(tau);
    const auto run = invexp::run_ensemble(shot_cfg, cfg.montecarlo.n_shots, args.threads, need_traces);
    for (const auto& rec : run.records) {
      shots_csv.row({tau, static_cast<double>(rec.shot_index), rec.displacement, rec.initial_z,
                     rec.initial_p, rec.final_z, rec.final_p});
      if (with_traces)
        for (size_t k = 0; k < rec.trace.size(); ++k)
          trace_csv->row({tau, static_cast<double>(rec.shot_index),
                          tau + static_cast<double>(k) / cfg.timeline.sample_rate, rec.trace[k]});
    }
    stats_csv.row(stats_row(tau, run.stats));
    summary.push_back({{"tau_s", tau},
                       {"n_shots", run.stats.n_shots},
                       {"sigma_z_m", run.stats.sigma_z},
                       {"sigma_z_err_m", run.stats.sigma_z_err},
                       {"xi_m", run.stats.xi},
                       {"xi_err_m", run.stats.xi_err}});

    if (retrodict) {
      const auto model = invexp::recapture_model(cfg.physical, cfg.timeline.sample_rate,
                                                 cfg.montecarlo.detector_noise_psd);
      const auto prior = invexp::diffuse_prior(model);
      std::vector<invexp::GaussianState> ests(run.records.size());
      invexp::parallel_for(static_cast<int64_t>(run.records.size()), args.threads, [&](int64_t i) {
        ests[i] = invexp::estimate_recapture_state(run.records[i].trace, model, prior);
      });
      std::vector<invexp::PhaseSample> points(ests.size());
      Eigen::Matrix2d mean_cov = Eigen::Matrix2d::Zero();
      for (size_t i = 0; i < ests.size(); ++i) {
        points[i] = {ests[i].mean_z, ests[i].mean_p};
        mean_cov += ests[i].covariance();
        estimates.push_back({{"tau_s", tau},
                             {"shot_index", run.records[i].shot_index},
                             {"z_m", ests[i].mean_z},
                             {"p_kgms", ests[i].mean_p},
                             {"var_z_m2", ests[i].var_z},
                             {"var_p_kgms2", ests[i].var_p},
                             {"cov_zp_kgm2s", ests[i].cov_zp}});
      }
      mean_cov /= static_cast<double>(ests.size());
      invexp::StatsOptions opts;
      opts.bootstrap_seed = invexp::mix_seed(cfg.seed, 0x2E720);
      opts.hbar = cfg.physical.hbar;
      opts.deconvolve = mean_cov;
      opts.n_threads = args.threads;
      retro_csv->row(stats_row(tau, invexp::compute_stats(points, opts)));
    }
  }

  Json manifest;
  manifest["command"] = "simulate";
  manifest["seed"] = cfg.seed;
  manifest["summary"] = summary;
  manifest["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "simulate.json", manifest);
  if (retrodict) write_json(fs::path(cfg.out_dir) / "estimates.json", estimates);
  return 0;
}

int cmd_fit(const CommonArgs& args, const std::string& curve_path) {
  RunConfig cfg = load_config(args);
  const auto table = read_table(curve_path, {"tau_s", "sigma_z_m", "sigma_z_err_m"});
  const auto tau = table.column("tau_s");
  const auto sigma = table.column("sigma_z_m");
  const auto err = table.column("sigma_z_err_m");
  invexp::ExpansionCurve curve;
  for (size_t i = 0; i < tau.size(); ++i) curve.points.push_back({tau[i], sigma[i], err[i]});

  const auto fit = invexp::fit_expansion(curve, cfg.physical, cfg.fit.multistart, cfg.fit.max_iterations);
  Json j = fit_to_json(fit, {"sigma0_m", "sigma_disp_m"});
  j["command"] = "fit";
  j["curve_file"] = curve_path;
  j["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "fit.json", j);

  std::cout << "sigma0_m      = " << fit.parameters(0) << " +- " << std::sqrt(fit.covariance(0, 0))
            << "\nsigma_disp_m  = " << fit.parameters(1) << " +- " << std::sqrt(fit.covariance(1, 1))
            << "\nconverged     = " << (fit.converged ? "yes" : "no") << '\n';
  return fit.converged ? 0 : 3;
}

int cmd_budget(const CommonArgs& args, const std::string& points_path) {
  RunConfig cfg = load_config(args);
  const auto table = read_table(points_path, {"omega_inv_rad_s", "sigma_disp_m", "sigma_disp_err_m"});
  const auto omega = table.column("omega_inv_rad_s");
  const auto sigma = table.column("sigma_disp_m");
  const auto err = table.column("sigma_disp_err_m");
  std::vector<invexp::BudgetPoint> points;
  for (size_t i = 0; i < omega.size(); ++i) points.push_back({omega[i], sigma[i], err[i]});

  const auto fit = invexp::fit_noise_budget(points, cfg.physical.mass, cfg.fit.multistart,
                                            cfg.fit.max_iterations);
  Json j = fit_to_json(fit, {"sigma_sf_n", "sigma_zeta_m"});
  j["command"] = "budget";
  j["points_file"] = points_path;
  j["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "budget.json", j);

  std::cout << "sigma_sf_n    = " << fit.parameters(0) << " +- " << std::sqrt(fit.covariance(0, 0))
            << "\nsigma_zeta_m  = " << fit.parameters(1) << " +- " << std::sqrt(fit.covariance(1, 1))
            << "\nconverged     = " << (fit.converged ? "yes" : "no") << '\n';
  return fit.converged ? 0 : 3;
}

int cmd_map(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  if (!cfg.map) throw invexp::ConfigError("config error at map: section required");
  const auto init = cfg.require_initial();
  const auto& mc = *cfg.map;

  const auto map = invexp::ximax_map(invexp::log_spaced(mc.sigma_disp_min, mc.sigma_disp_max, mc.n_sigma_disp),
                                     invexp::log_spaced(mc.gamma_min, mc.gamma_max, mc.n_gamma),
                                     cfg.physical, init, args.threads);

  invexp::CsvWriter grid_csv((fs::path(cfg.out_dir) / "map.csv").string(),
                             {"sigma_disp_m", "gamma_rad_s", "xi_max_m", "tau_star_s"});
  for (size_t g = 0; g < map.gamma_values.size(); ++g)
    for (size_t s = 0; s < map.sigma_disp_values.size(); ++s)
      grid_csv.row({map.sigma_disp_values[s], map.gamma_values[g], map.at(g, s),
                    map.tau_star[g * map.sigma_disp_values.size() + s]});

  invexp::CsvWriter contour_csv((fs::path(cfg.out_dir) / "contours.csv").string(),
                                {"xi_level_m", "gamma_rad_s", "sigma_disp_m"});
  for (const double level : mc.contour_levels)
    for (const auto& pt : invexp::extract_contour(map, level))
      contour_csv.row({level, pt.gamma, pt.sigma_disp});

  Json manifest;
  manifest["command"] = "map";
  if (!mc.markers.empty()) {
    Json marks = Json::array();
    for (const auto& mk : mc.markers) {
      invexp::PhysicalParams p = cfg.physical;
      p.heating_rate = mk.gamma;
      const auto best = invexp::xi_max(p, init, mk.sigma_disp);
      marks.push_back({{"sigma_disp_m", mk.sigma_disp},
                       {"gamma_rad_s", mk.gamma},
                       {"xi_max_m", best.xi},
                       {"tau_star_s", best.tau_star}});
    }
    manifest["markers"] = marks;
  }
  if (mc.scaling_base) {
    const auto report =
        invexp::scaling_check(cfg.physical, init, mc.scaling_base->sigma_disp, mc.scaling_base->gamma);
    manifest["scaling"] = {{"base_xi_m", report.base_xi},
                           {"improved_xi_m", report.improved_xi},
                           {"ratio", report.ratio},
                           {"within_expected", report.within_expected}};
  }
  manifest["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "map.json", manifest);
  return 0;
}

int cmd_requirements(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  if (!cfg.requirements) throw invexp::ConfigError("config error at requirements: section required");
  const auto& rq = *cfg.requirements;

  Json j;
  j["command"] = "requirements";
  j["voltage_noise_v2_hz"] = invexp::required_voltage_noise(cfg.physical, rq.target_gamma);
  j["voltage_noise_v_rthz"] = std::sqrt(j["voltage_noise_v2_hz"].get<double>());
  j["position_noise_m2_hz"] = invexp::required_position_noise(rq.tau_ex, rq.sigma_target);
  j["force_noise_n2_hz"] = invexp::required_force_noise(cfg.physical, rq.tau_ex, rq.sigma_target);
  j["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "requirements.json", j);
  std::cout << "S_v  = " << j["voltage_noise_v2_hz"].get<double>() << " V^2/Hz\n"
            << "S_zz = " << j["position_noise_m2_hz"].get<double>() << " m^2/Hz\n"
            << "S_sf = " << j["force_noise_n2_hz"].get<double>() << " N^2/Hz\n";
  return 0;
}

int cmd_retrodict(const CommonArgs& args, const std::string& trace_path) {
  RunConfig cfg = load_config(args);
  const auto table = read_table(trace_path, {"time_s", "position_m"});
  const auto time = table.column("time_s");
  const auto position = table.column("position_m");
  if (time.size() < 2) throw std::runtime_error("retrodict: trace needs at least 2 samples");
  const bool grouped = table.column_index("shot_index") >= 0;
  const std::vector<double> shot_ids =
      grouped ? table.column("shot_index") : std::vector<double>(time.size(), 0.0);

  // Uniform sample interval from the first trace.
  double dt = 0.0;
  for (size_t i = 1; i < time.size(); ++i) {
    if (shot_ids[i] != shot_ids[0]) break;
    if (dt == 0.0)
      dt = time[i] - time[i - 1];
    else if (std::abs((time[i] - time[i - 1]) / dt - 1.0) > 1e-6)
      throw std::runtime_error("retrodict: trace is not uniformly sampled");
  }
  if (!(dt > 0.0)) throw std::runtime_error("retrodict: cannot determine sample interval");

  const auto model = invexp::recapture_model(cfg.physical, 1.0 / dt, cfg.montecarlo.detector_noise_psd);
  const auto prior = invexp::diffuse_prior(model);

  Json estimates = Json::array();
  size_t begin = 0;
  while (begin < position.size()) {
    // A trace ends when the shot index changes or time restarts (multi-tau files).
    size_t end = begin;
    while (end < position.size() && shot_ids[end] == shot_ids[begin] &&
           (end == begin || time[end] > time[end - 1]))
      ++end;
    const auto est = invexp::estimate_recapture_state(
        std::span<const double>(position.data() + begin, end - begin), model, prior);
    estimates.push_back({{"shot_index", shot_ids[begin]},
                         {"t0_s", time[begin]},
                         {"z_m", est.mean_z},
                         {"p_kgms", est.mean_p},
                         {"var_z_m2", est.var_z},
                         {"var_p_kgms2", est.var_p},
                         {"cov_zp_kgm2s", est.cov_zp}});
    begin = end;
  }

  Json j;
  j["command"] = "retrodict";
  j["trace_file"] = trace_path;
  j["estimates"] = estimates;
  j["config"] = cfg.resolved();
  write_json(fs::path(cfg.out_dir) / "estimates.json", j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inverted-potential state-expansion toolkit"};
  app.require_subcommand(1);

  CommonArgs predict_args, simulate_args, fit_args, budget_args, map_args, req_args, retro_args;
  std::string curve_path, points_path, trace_path;
  bool with_traces = false, retrodict = false;

  add_common(app.add_subcommand("predict", "closed-form sigma_z(tau) and xi(tau) curves"), predict_args, false);
  auto* sim = app.add_subcommand("simulate", "Monte Carlo ensembles over a tau list");
  add_common(sim, simulate_args);
  sim->add_flag("--with-traces", with_traces, "write detector traces");
  sim->add_flag("--retrodict", retrodict, "estimate recapture states from traces");
  auto* fit_cmd = app.add_subcommand("fit", "fit (sigma_0, sigma_disp) to a sigma_z(tau) curve");
  add_common(fit_cmd, fit_args, false);
  fit_cmd->add_option("--curve", curve_path, "curve CSV (tau_s,sigma_z_m,sigma_z_err_m)")->required();
  auto* budget_cmd = app.add_subcommand("budget", "fit (sigma_sf, sigma_zeta) to sigma_disp(omega_inv)");
  add_common(budget_cmd, budget_args, false);
  budget_cmd->add_option("--points", points_path, "points CSV (omega_inv_rad_s,sigma_disp_m,sigma_disp_err_m)")
      ->required();
  add_common(app.add_subcommand("map", "xi_max over a (sigma_disp, Gamma) grid with contours"), map_args);
  add_common(app.add_subcommand("requirements", "noise levels required for a target expansion"), req_args, false);
  auto* retro_cmd = app.add_subcommand("retrodict", "estimate recapture states from a trace CSV");
  add_common(retro_cmd, retro_args, false);
  retro_cmd->add_option("--trace", trace_path, "trace CSV (time_s,position_m[,shot_index])")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("predict")) return cmd_predict(predict_args);
    if (app.got_subcommand("simulate")) return cmd_simulate(simulate_args, with_traces, retrodict);
    if (app.got_subcommand("fit")) return cmd_fit(fit_args, curve_path);
    if (app.got_subcommand("budget")) return cmd_budget(budget_args, points_path);
    if (app.got_subcommand("map")) return cmd_map(map_args);
    if (app.got_subcommand("requirements")) return cmd_requirements(req_args);
    if (app.got_subcommand("retrodict")) return cmd_retrodict(retro_args, trace_path);
  } catch (const invexp::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric domain error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
