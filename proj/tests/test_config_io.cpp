#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "invexp/config.hpp"
#include "invexp/csvio.hpp"
#include "test_helpers.hpp"

using namespace invexp;
using namespace testing_helpers;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using Json = nlohmann::ordered_json;

namespace {

Json minimal_config() {
  return Json::parse(R"racket({
    "physical": {"mass_kg": 4.4e-18, "f_trap_hz": 44000, "f_inv_hz": 9300, "heating_rate_hz": 554000},
    "initial": {"sigma0_m": 170e-12},
    "noise": {"sigma_disp_m": 1.14e-9},
    "seed": 12345
  })racket");
}

}  // namespace

TEST_CASE("config parsing and unit conversion", "[config]") {
  SECTION("frequencies are converted by 2 pi exactly once") {
    const auto cfg = RunConfig::parse(minimal_config());
    REQUIRE(cfg.physical.omega_trap == Approx(kTwoPi * 44000.0).epsilon(1e-15));
    REQUIRE(cfg.physical.omega_inv == Approx(kTwoPi * 9300.0).epsilon(1e-15));
    REQUIRE(cfg.physical.heating_rate == Approx(kTwoPi * 554000.0).epsilon(1e-15));
    REQUIRE(cfg.seed == 12345);
    REQUIRE(cfg.require_sigma_disp() == 1.14e-9);
    REQUIRE(cfg.physical.hbar == kHbar);
  }

  SECTION("unknown keys are rejected with their path") {
    auto bad = minimal_config();
    bad["physical"]["omega_trap"] = 1.0;
    REQUIRE_THROWS_MATCHES(RunConfig::parse(bad), ConfigError,
                           Catch::Matchers::MessageMatches(ContainsSubstring("physical") &&
                                                           ContainsSubstring("omega_trap")));
    auto bad2 = minimal_config();
    bad2["surprise"] = 1;
    REQUIRE_THROWS_MATCHES(RunConfig::parse(bad2), ConfigError,
                           Catch::Matchers::MessageMatches(ContainsSubstring("surprise")));
  }

  SECTION("missing required keys are reported with their path") {
    auto bad = minimal_config();
    bad["physical"].erase("f_inv_hz");
    REQUIRE_THROWS_MATCHES(RunConfig::parse(bad), ConfigError,
                           Catch::Matchers::MessageMatches(ContainsSubstring("f_inv_hz")));
    Json no_physical = Json::object();
    REQUIRE_THROWS_AS(RunConfig::parse(no_physical), ConfigError);
  }

  SECTION("noise: direct spread and budget are mutually exclusive") {
    auto both = minimal_config();
    both["noise"]["sigma_sf_n"] = 1e-17;
    both["noise"]["sigma_zeta_m"] = 8e-10;
    REQUIRE_THROWS_AS(RunConfig::parse(both), ConfigError);

    auto budget_only = minimal_config();
    budget_only["noise"] = Json{{"sigma_sf_n", 10.9e-18}, {"sigma_zeta_m", 834e-12}};
    const auto cfg = RunConfig::parse(budget_only);
    REQUIRE(cfg.budget.has_value());
    REQUIRE(cfg.require_sigma_disp() == Approx(1.1054104931999680e-9).epsilon(1e-12));
  }

  SECTION("physical invariants enforced at parse time") {
    auto bad = minimal_config();
    bad["physical"]["mass_kg"] = -1.0;
    REQUIRE_THROWS_AS(RunConfig::parse(bad), ConfigError);
    auto small = minimal_config();
    small["initial"]["sigma0_m"] = 1e-13;  // below the zero-point size
    REQUIRE_THROWS_AS(RunConfig::parse(small), ConfigError);
  }

  SECTION("resolved config round trips") {
    auto full = minimal_config();
    full["map"] = Json{{"sigma_disp_min_m", 1e-13}, {"sigma_disp_max_m", 1e-8},
                       {"n_sigma_disp", 10},        {"gamma_min_hz", 0.01},
                       {"gamma_max_hz", 1e5},       {"n_gamma", 8}};
    full["requirements"] = Json{{"target_gamma_hz", 1.0}, {"tau_ex_s", 1e-4}, {"sigma_target_m", 5e-13}};
    const auto cfg = RunConfig::parse(full);
    const auto echo = RunConfig::parse(cfg.resolved());
    REQUIRE(echo.physical.omega_inv == cfg.physical.omega_inv);
    REQUIRE(echo.map->gamma_max == cfg.map->gamma_max);
    REQUIRE(echo.requirements->target_gamma == cfg.requirements->target_gamma);
    REQUIRE(echo.seed == cfg.seed);
  }
}

TEST_CASE("csv round trip and validation", "[config][io]") {
  const auto tmp = std::filesystem::temp_directory_path() / "invexp_csv_test.csv";

  SECTION("values round trip bit-exactly through %.17g") {
    RandomStream rng(41, 0);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 200; ++i) {
      const double mag = std::exp(uniform_in(rng, -60.0, 60.0));
      rows.push_back({mag * rng.next_normal(), rng.next_normal(), (double)i});
    }
    rows.push_back({0.0, -0.0, 5e-324});
    {
      CsvWriter w(tmp.string(), {"a", "b", "c"});
      for (const auto& r : rows) w.row(r);
    }
    const auto table = CsvTable::read(tmp.string());
    REQUIRE(table.columns == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(table.rows.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < 3; ++j) REQUIRE(table.rows[i][j] == rows[i][j]);
    std::filesystem::remove(tmp);
  }

  SECTION("malformed input is reported") {
    {
      std::ofstream out(tmp);
      out << "x,y\n1.0,2.0\n3.0,oops\n";
    }
    REQUIRE_THROWS_WITH(CsvTable::read(tmp.string()), ContainsSubstring("not a number"));
    {
      std::ofstream out(tmp);
      out << "x,y\n1.0\n";
    }
    REQUIRE_THROWS_WITH(CsvTable::read(tmp.string()), ContainsSubstring("column count"));
    {
      std::ofstream out(tmp);
      out << "x,y\n1.0,2.0\n";
    }
    REQUIRE_THROWS_WITH(CsvTable::read(tmp.string()).column("z"), ContainsSubstring("missing column"));
    std::filesystem::remove(tmp);
  }
}
