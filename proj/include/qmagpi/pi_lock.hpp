#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <vector>

#include "qmagpi/sensor.hpp"

namespace qmagpi {

/// Discrete PI controller acting on the lock-in in-phase output.
///
/// The error is e = error_scale * (setpoint - measurement). With the default
/// error_scale of 1 Hz/V, kp is in Hz/V and ki in Hz/(V s). Scenarios set
/// error_scale to a loop normalization divided by |discriminator slope| so
/// that kp is dimensionless and ki is in 1/s; the gain signs then carry the
/// plant sign (stable when kp * slope > 0).
struct PiConfig {
  double kp = -50.0;
  double ki = -2.5;
  double setpoint = 0.0;   // V
  double clamp = 5e6;      // Hz, |output| limit
  double dt = 1.0 / 1900;  // s, control period
  double error_scale = 1.0;  // Hz per V

  void validate() const;
};

struct PiState {
  double integrator = 0.0;   // Hz
  double last_output = 0.0;  // Hz
};

struct PiStep {
  PiState state;
  double output = 0.0;  // Hz
};

/// One controller update with conditional-integration anti-windup: the
/// integrator only advances while the unclipped output is inside the clamp,
/// and is itself bounded by the clamp. Throws on a non-finite measurement.
PiStep pi_step(const PiState& state, double measurement, const PiConfig& cfg);

struct LoopRecord {
  std::vector<double> time;            // s
  std::vector<double> error;           // V
  std::vector<double> pi_output;       // Hz
  std::vector<double> field_estimate;  // T
  bool locked = true;
  double unlock_time = std::numeric_limits<double>::quiet_NaN();
  double baseline_rms = 0.0;  // V, error RMS before the loop closed

  std::size_t size() const { return time.size(); }
};

struct LoopOptions {
  double settle_time = -1.0;  // s before the loop closes; < 0 selects 20 tau
  double lock_loss_factor = 5.0;
  std::size_t lock_loss_periods = 100;
};

/// Closed-loop tracking. The carrier in `sensor.drive` must sit at the
/// resonance (normally a fitted center). The control period is the lock-in
/// output period; `pi.dt` is overridden with it. field_estimate is
/// pi_output / gamma_e.
LoopRecord closed_loop_run(const SensorSetup& sensor, const PiConfig& pi, double duration,
                           const LoopOptions& opts = {});

/// Open-loop readout at a fixed carrier: field_estimate is
/// (setpoint - I) / (zc_slope * gamma_e) with setpoint 0.
LoopRecord open_loop_run(const SensorSetup& sensor, double zc_slope, double duration, double settle = -1.0);

/// Two-point slope dI/dfc about the configured carrier, from settled means
/// at carrier +- delta.
double measure_discriminator_slope(const SensorSetup& sensor, double delta, double dwell);

struct DynamicRangePlan {
  double max_field = 300e-6;  // T
  double min_field = 0.0;     // T; 0 selects max_field / 1000
  std::size_t n_steps = 100;  // geometric grid
  double hold_time = 10.0;    // s per closed-loop stair
  double first_hold = 40.0;   // s on the zero-field reference stair
  double open_dwell = 2.0;    // s per open-loop point
  double tolerance = 0.05;    // linearity threshold
};

struct DynamicRangeResult {
  std::vector<double> applied;  // T
  std::vector<double> measured_open;
  std::vector<double> measured_closed;
  double range_open = 0.0;
  double range_closed = 0.0;
};

/// Largest applied value with |measured - applied| <= tolerance * applied;
/// zero when no point qualifies.
double linear_range(const std::vector<double>& applied, const std::vector<double>& measured, double tolerance);

/// Stepped DC fields along sensor.field.axis_index: open-loop points are
/// independent settled readings scaled by zc_slope; the closed-loop points
/// come from one continuous staircase run. Both are offset-corrected by a
/// zero-field reading (an extra first stair in the closed-loop run).
DynamicRangeResult dynamic_range_experiment(const SensorSetup& sensor, const PiConfig& pi, double zc_slope,
                                            const DynamicRangePlan& plan);

void write_loop_csv(const std::filesystem::path& path, const LoopRecord& record);
void write_dynamic_range_csv(const std::filesystem::path& path, const DynamicRangeResult& result);

}  // namespace qmagpi
