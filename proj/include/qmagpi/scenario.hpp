#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qmagpi/analysis.hpp"
#include "qmagpi/pi_lock.hpp"
#include "qmagpi/sensor.hpp"
#include "qmagpi/sweep_fit.hpp"

namespace qmagpi {

enum class ScenarioKind { odmr, track, dynrange, allan, psd, replay, calibrate };

/// Throws ConfigError for an unknown name.
ScenarioKind parse_scenario_kind(const std::string& name);
const char* scenario_name(ScenarioKind kind);

/// Default Zeeman shifts of the four axes, Hz. Axis 0's lower branch sits
/// at 2.8525 GHz (the ODMR window), axis 1's upper branch at 2.93 GHz is
/// isolated by more than 40 MHz and serves as the tracking line.
inline constexpr std::array<double, 4> kDefaultProjections{-17.5e6, 60e6, -40e6, -2.5e6};

/// Instrument-scale defaults: 1 MHz lines, 0.15 % contrast, 7.5e14 photons/s,
/// 100 kHz deviation at 1 kHz, 10 ms lock-in, a detector gain giving a
/// maximum discriminator slope near 2.2 nV/Hz and an electronic floor giving
/// about 15 uV of I noise. The carrier starts on the ODMR-window line and
/// the field profile acts along axis 1.
SensorSetup reference_sensor();

/// Frequency of the central hyperfine line of (axis, branch) for the bias
/// field alone.
double line_frequency(const SensorSetup& sensor, int axis, int branch);

/// Uniform grid of n points over f0 +- half_width.
SweepPlan window_around(double f0, double half_width, std::size_t n_points, double dwell);

struct LockPoint {
  OdmrSpectrum spectrum;    // in the final demodulation phase
  DerivLorentzianFit fit;
  double phase = 0.0;       // rad, applied to the sensor
  double zc_slope = 0.0;    // V/Hz, measured two-point slope at fit.center
};

/// Sweeps `plan`, sets the demodulation phase from the strongest sweep
/// point (when `auto_phase`), fits the triplet, tunes the carrier to the
/// fitted center and measures the discriminator slope there without noise.
/// The phase is turned by pi if needed so that the slope has the sign of
/// `slope_sign`.
LockPoint acquire_lock_point(SensorSetup& sensor, const SweepPlan& plan, double slope_sign, bool auto_phase = true,
                             std::vector<std::string>* warnings = nullptr);

/// Copy of `pi` with error_scale = loop_gain / |zc_slope|.
PiConfig normalized_pi(const PiConfig& pi, double zc_slope, double loop_gain);

struct CoilCalibration {
  std::vector<double> currents;  // A
  std::vector<double> centers;   // Hz, fitted line center per current
  double slope_hz_per_a = 0.0;
  double slope_stderr = 0.0;     // Hz/A
  double slope_t_per_a = 0.0;
};

/// Simulated coil calibration: per current a sweep of `plan` with a static
/// field coil_constant * I along sensor.field.axis_index, a triplet fit, and
/// a least-squares line through center versus current. Needs at least five
/// currents that are not all equal.
CoilCalibration calibrate_coil(const SensorSetup& sensor, double coil_constant, const std::vector<double>& currents,
                               const SweepPlan& plan);

/// Synthetic elevator passage: the car rises from ground to the third
/// floor past a sensor on the second, stopping at each floor, with a door
/// cycle at the second floor. The field is relative to the ground-floor
/// value and reaches `peak` at the sensor floor.
TimeSeries elevator_profile(double peak, double dt);

struct TrackPlan {
  double amplitude = 50e-9;  // T, square half-swing
  double frequency = 0.5;    // Hz
  double duration = 8.0;     // s per trace
  std::size_t traces = 100;
  double window = 1.0;       // s, histogram window of the first trace
};

struct TrackResult {
  TimeSeries averaged;          // T, offset-corrected mean of all traces
  TimeSeries first;             // T, first offset-corrected trace
  double amplitude = 0.0;       // T, recovered half-swing of the average
  double sigma_single = 0.0;    // T, Gaussian fit of pooled single-trace plateau residuals
  double sigma_predicted = 0.0; // T, from the configured white noise
  double sensitivity = 0.0;     // T/sqrt(Hz), sigma_single / sqrt(2 ENBW)
  GaussianFit window_fit;       // first trace, one plateau window
};

/// Open-loop square-wave test: `traces` independent records of a square
/// field along the profile axis, converted with zc_slope, offset-corrected
/// and averaged. Samples within 10 tau after each edge are excluded from
/// plateau statistics.
TrackResult square_wave_tracking(const SensorSetup& sensor, double zc_slope, const TrackPlan& plan);

struct PsdPlan {
  double duration = 1.0;
  std::size_t traces = 50;
  std::size_t segments = 1;
  double overlap = 0.5;
  Window window = Window::hann;
  double band_lo = 10.0;
  double band_hi = 100.0;
};

struct NoiseSpectrum {
  PsdResult spectrum;  // de-embedded from the lock-in low-pass, field-scaled
  double floor = 0.0;  // T/sqrt(Hz) over the band
};

/// Averaged open-loop I spectrum of `traces` independent records.
NoiseSpectrum noise_spectrum(const SensorSetup& sensor, double zc_slope, const PsdPlan& plan);

struct AllanPlan {
  double duration = 600.0;
  std::string mode = "open";  // open, insensitive, closed
  std::size_t per_decade = 5;
  double confidence = 0.683;
  EdfModel edf = EdfModel::white_fm;
  bool write_trace = false;
};

struct ReplayPlan {
  std::optional<std::filesystem::path> csv;
  double peak = 5e-6;           // T, built-in profile
  double dt = 5e-3;             // s, built-in profile spacing
  double smoothing_sigma = 50;  // output samples
};

struct CalibratePlan {
  double coil_constant = 4.889e-6;  // T/A
  std::vector<double> currents{-10, -5, 0, 5, 10};
  int axis = 0;
  double half_width = 6e6;
  std::size_t n_points = 61;
  double dwell = 0.1;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::odmr;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;
  SensorSetup sensor;
  bool auto_phase = true;
  PiConfig pi;
  double loop_gain = 0.3;
  std::optional<SweepPlan> sweep;
  TrackPlan track;
  DynamicRangePlan dynrange;
  AllanPlan allan;
  PsdPlan psd;
  std::vector<std::string> psd_cases{"sensitive", "insensitive", "laser_off"};
  ReplayPlan replay;
  CalibratePlan calibrate;
  std::string echo;  // normalized JSON of the input, with the effective seed
};

/// Strict parse: unknown keys, wrong types and invalid values raise
/// ConfigError naming the key path. `seed` and the section named after the
/// scenario are required. Relative paths resolve against `base_dir`.
ScenarioConfig parse_config(const std::string& text, ScenarioKind kind, const std::filesystem::path& base_dir = {},
                            std::optional<std::uint64_t> seed_override = std::nullopt);

ScenarioConfig load_config(const std::filesystem::path& path, ScenarioKind kind,
                           std::optional<std::uint64_t> seed_override = std::nullopt);

struct RunSummary {
  std::vector<std::filesystem::path> files;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::string> warnings;
};

/// Runs the scenario, writing CSV results and manifest.json (config echo,
/// seed, version, timestamp, metrics) into `out_dir`.
RunSummary run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir);

const char* version();

}  // namespace qmagpi
