// qmagpi <scenario> --config <path> [--seed N] [--out DIR]

#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "qmagpi/csv.hpp"
#include "qmagpi/error.hpp"
#include "qmagpi/scenario.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NV lock-in magnetometer simulator"};
  app.set_version_flag("--version", std::string(qmagpi::version()));
  std::string scenario;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  app.add_option("scenario", scenario, "odmr, track, dynrange, allan, psd, replay or calibrate")->required();
  app.add_option("--config", config, "JSON configuration file")->required();
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--out", out, "output directory (falls back to QMAGPI_OUT, then ./out)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  qmagpi::ScenarioConfig cfg;
  try {
    cfg = qmagpi::load_config(config, qmagpi::parse_scenario_kind(scenario), seed);
  } catch (const qmagpi::ConfigError& e) {
    std::cerr << "qmagpi: config error in " << config << ": " << e.what() << '\n';
    return kExitConfig;
  }

  std::filesystem::path dir = "out";
  if (!out.empty()) {
    dir = out;
  } else if (cfg.output_dir) {
    dir = *cfg.output_dir;
  } else if (const char* env = std::getenv("QMAGPI_OUT"); env && *env) {
    dir = env;
  }

  try {
    const auto summary = qmagpi::run_scenario(cfg, dir);
    for (const auto& w : summary.warnings) std::cerr << "qmagpi: warning: " << w << '\n';
    for (const auto& [key, value] : summary.metrics) {
      std::cout << key << " = " << qmagpi::csv::format_number(value) << '\n';
    }
    for (const auto& f : summary.files) std::cout << "wrote " << f.string() << '\n';
  } catch (const qmagpi::ConfigError& e) {
    std::cerr << "qmagpi: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "qmagpi: " << scenario << " failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
