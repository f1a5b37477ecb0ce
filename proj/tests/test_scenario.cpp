#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "qmagpi/error.hpp"
#include "qmagpi/scenario.hpp"

using namespace qmagpi;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "qmagpi_scenario_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(QMAGPI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error_where(const std::string& text, ScenarioKind kind) {
  try {
    parse_config(text, kind);
  } catch (const ConfigError& e) {
    return e.where();
  }
  return "<no error>";
}

// Short calibration sweep for fast end-to-end runs.
constexpr const char* kQuickCalibrate = R"({
  "seed": 7,
  "calibrate": {"coil_constant": 4.889e-6, "currents": [-10, -5, 0, 5, 10], "n_points": 41, "dwell": 0.05}
})";

}  // namespace

TEST_CASE("scenario names") {
  for (auto kind : {ScenarioKind::odmr, ScenarioKind::track, ScenarioKind::dynrange, ScenarioKind::allan,
                    ScenarioKind::psd, ScenarioKind::replay, ScenarioKind::calibrate}) {
    CHECK(parse_scenario_kind(scenario_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_scenario_kind("sweep"), ConfigError);
}

TEST_CASE("config errors name the offending key") {
  CHECK(config_error_where(R"({"odmr": {}})", ScenarioKind::odmr) == "seed");
  CHECK(config_error_where(R"({"seed": -3, "odmr": {}})", ScenarioKind::odmr) == "seed");
  CHECK(config_error_where(R"({"seed": 1, "odmr": {}, "nv": {"linewidht": 1e6}})", ScenarioKind::odmr) ==
        "nv.linewidht");
  CHECK(config_error_where(R"({"seed": 1, "odmr": {}, "drive": {"carrier": "2.87 GHz"}})", ScenarioKind::odmr) ==
        "drive.carrier");
  CHECK(config_error_where(R"({"seed": 1, "odmr": {}, "nv": {"contrast": 1.5}})", ScenarioKind::odmr) == "nv");
  CHECK(config_error_where(R"({"seed": 1})", ScenarioKind::track) == "track");
  CHECK(config_error_where(R"({"seed": 1, "track": {}, "psd": {}})", ScenarioKind::track) == "psd");
  CHECK(config_error_where(R"({"seed": 1, "scenario": "odmr", "track": {}})", ScenarioKind::track) == "scenario");
  CHECK(config_error_where(R"({"seed": 1, "track": {"traces": 2.5}})", ScenarioKind::track) == "track.traces");
  CHECK(config_error_where(R"({"seed": 1, "calibrate": {}})", ScenarioKind::calibrate) == "calibrate.coil_constant");
  CHECK(config_error_where(R"({"seed": 1, "psd": {"cases": ["loud"]}})", ScenarioKind::psd) == "psd.cases");
  CHECK(config_error_where(R"({"seed": 1, "odmr": {}, "noise": {"temperature": {"ramp": 0.01}}})",
                           ScenarioKind::odmr) == "noise.temperature.duration");
  CHECK(config_error_where(R"({"seed": 1, "odmr": {} )", ScenarioKind::odmr).empty());
}

TEST_CASE("config parsing applies values and the seed override") {
  const auto cfg = parse_config(
      R"({"seed": 5, "odmr": {}, "lockin": {"time_constant": 0.025}, "pi": {"clamp": 2e6, "loop_gain": 0.5},
          "sweep": {"f_start": 2.85e9, "f_stop": 2.855e9, "n_points": 51, "dwell": 0.05}})",
      ScenarioKind::odmr);
  CHECK(cfg.seed == 5);
  CHECK(cfg.sensor.noise.seed == 5);
  CHECK(cfg.sensor.lockin.time_constant == 0.025);
  CHECK(cfg.pi.clamp == 2e6);
  CHECK(cfg.loop_gain == 0.5);
  REQUIRE(cfg.sweep);
  CHECK(cfg.sweep->n_points == 51);

  const auto over = parse_config(R"({"odmr": {}})", ScenarioKind::odmr, {}, 99);
  CHECK(over.seed == 99);
  const auto echo = nlohmann::json::parse(over.echo);
  CHECK(echo["seed"] == 99);

  const auto rel = parse_config(R"({"seed": 1, "odmr": {}, "output_dir": "results"})", ScenarioKind::odmr, "/base");
  REQUIRE(rel.output_dir);
  CHECK(*rel.output_dir == fs::path("/base/results"));
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"odmr", "track", "dynrange", "allan", "psd", "replay", "calibrate"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(fs::path(QMAGPI_CONFIG_DIR) / (std::string(name) + ".json"), parse_scenario_kind(name)));
  }
  CHECK_NOTHROW(load_config(fs::path(QMAGPI_CONFIG_DIR) / "allan_open.json", ScenarioKind::allan));
}

TEST_CASE("coil calibration") {
  auto sensor = reference_sensor();
  sensor.field.axis_index = 0;
  const double f0 = line_frequency(sensor, 0, -1);
  const auto plan = window_around(f0, 6e6, 61, 0.1);
  const std::vector<double> currents{-10, -5, 0, 5, 10};
  const double expected = sensor.nv.gamma_e * 4.889e-6;
  CHECK(expected == doctest::Approx(137.0e3).epsilon(1e-3));

  const auto r = calibrate_coil(sensor, 4.889e-6, currents, plan);
  CHECK(r.slope_hz_per_a == doctest::Approx(expected).epsilon(0.01));
  CHECK(r.slope_t_per_a == doctest::Approx(4.889e-6).epsilon(0.01));

  const auto twice = calibrate_coil(sensor, 2 * 4.889e-6, currents, plan);
  CHECK(twice.slope_hz_per_a / r.slope_hz_per_a == doctest::Approx(2.0).epsilon(0.01));

  // A coil along another axis projects with cos = -1/3 onto the measured one.
  auto skew = sensor;
  skew.field.axis_index = 1;
  CHECK(calibrate_coil(skew, 4.889e-6, currents, plan).slope_hz_per_a == doctest::Approx(-expected / 3).epsilon(0.02));

  const auto none = calibrate_coil(sensor, 0.0, currents, plan);
  CHECK(std::abs(none.slope_hz_per_a) < 0.01 * expected);

  CHECK_THROWS_AS(calibrate_coil(sensor, 4.889e-6, {-1, 0, 1, 2}, plan), InvalidArgument);
  CHECK_THROWS_AS(calibrate_coil(sensor, 4.889e-6, {2, 2, 2, 2, 2}, plan), InvalidArgument);
}

TEST_CASE("elevator profile") {
  const double peak = 5e-6;
  const auto p = elevator_profile(peak, 5e-3);
  CHECK(p.duration() == doctest::Approx(45.0).epsilon(1e-3));
  CHECK(p.at(0.0) == 0.0);
  CHECK(p.at(4.0) == 0.0);
  CHECK(p.at(21.0) == doctest::Approx(peak).epsilon(1e-9));
  CHECK(p.at(25.0) == doctest::Approx(1.15 * peak).epsilon(1e-9));
  CHECK(p.at(29.0) == doctest::Approx(peak).epsilon(1e-9));
  const double top = p.at(44.0);
  CHECK(top > 0.0);
  CHECK(top < 0.5 * peak);
  CHECK(p.at(12.0) > 0.0);
  CHECK(p.at(12.0) < peak);
  double jump = 0;
  for (std::size_t k = 1; k < p.size(); ++k) jump = std::max(jump, std::abs(p.values[k] - p.values[k - 1]));
  CHECK(jump < 0.01 * peak);
  CHECK_THROWS_AS(elevator_profile(peak, 0.0), InvalidArgument);
}

TEST_CASE("run_scenario writes results and a manifest") {
  const auto dir = scratch("manifest");
  const auto cfg = parse_config(kQuickCalibrate, ScenarioKind::calibrate);
  const auto summary = run_scenario(cfg, dir);
  CHECK(fs::exists(dir / "calibration.csv"));
  CHECK(fs::exists(dir / "manifest.json"));
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m["scenario"] == "calibrate");
  CHECK(m["seed"] == 7);
  CHECK(m["version"] == version());
  CHECK(m["timestamp"].is_string());
  CHECK(m["config"]["calibrate"]["coil_constant"] == 4.889e-6);
  CHECK(m["outputs"].size() + 1 == summary.files.size());
  CHECK(m["outputs"][0].get<std::string>().find("calibration.csv") != std::string::npos);
  CHECK(m["metrics"]["slope_hz_per_a"].get<double>() == doctest::Approx(137.0e3).epsilon(0.01));
  CHECK(slurp(dir / "calibration.csv").rfind("current_a,center_hz,shift_hz\n", 0) == 0);
}

TEST_CASE("cli") {
  const auto dir = scratch("cli");
  const auto cfg_path = dir / "calibrate.json";
  spit(cfg_path, kQuickCalibrate);

  SUBCASE("reruns with the same seed are byte-identical") {
    REQUIRE(run_cli("calibrate --config " + cfg_path.string() + " --out " + (dir / "a").string(), dir / "a.log") == 0);
    REQUIRE(run_cli("calibrate --config " + cfg_path.string() + " --out " + (dir / "b").string(), dir / "b.log") == 0);
    CHECK(slurp(dir / "a" / "calibration.csv") == slurp(dir / "b" / "calibration.csv"));
    REQUIRE(run_cli("calibrate --config " + cfg_path.string() + " --seed 8 --out " + (dir / "c").string(),
                    dir / "c.log") == 0);
    CHECK(slurp(dir / "a" / "calibration.csv") != slurp(dir / "c" / "calibration.csv"));
    CHECK(nlohmann::json::parse(slurp(dir / "c" / "manifest.json"))["seed"] == 8);
    CHECK(slurp(dir / "a.log").find("slope_hz_per_a") != std::string::npos);
  }
  SUBCASE("config problems exit with 2") {
    spit(dir / "bad.json", R"({"seed": 1, "calibrate": {"coil_constant": 4.889e-6, "colour": 3}})");
    CHECK(run_cli("calibrate --config " + (dir / "bad.json").string(), dir / "bad.log") == 2);
    CHECK(slurp(dir / "bad.log").find("calibrate.colour") != std::string::npos);
    CHECK(run_cli("calibrate --config " + (dir / "missing.json").string(), dir / "missing.log") == 2);
    CHECK(run_cli("nonsense --config " + cfg_path.string(), dir / "kind.log") == 2);
    CHECK(run_cli("calibrate", dir / "noargs.log") == 2);
    spit(dir / "flat.json", R"({"seed": 1, "calibrate": {"coil_constant": 4.889e-6, "currents": [1, 1, 1, 1, 1]}})");
    CHECK(run_cli("calibrate --config " + (dir / "flat.json").string(), dir / "flat.log") == 2);
  }
  SUBCASE("runtime failures exit with 3") {
    spit(dir / "occupied", "a file, not a directory");
    CHECK(run_cli("calibrate --config " + cfg_path.string() + " --out " + (dir / "occupied" / "sub").string(),
                  dir / "occupied.log") == 3);
  }
  SUBCASE("output directory falls back to the environment") {
    const auto env_dir = dir / "from_env";
    setenv("QMAGPI_OUT", env_dir.c_str(), 1);
    CHECK(run_cli("calibrate --config " + cfg_path.string(), dir / "env.log") == 0);
    unsetenv("QMAGPI_OUT");
    CHECK(fs::exists(env_dir / "manifest.json"));
  }
}
