#include "qmagpi/pi_lock.hpp"

#include <algorithm>
#include <cmath>

#include "qmagpi/csv.hpp"
#include "qmagpi/error.hpp"

namespace qmagpi {

void PiConfig::validate() const {
  if (!std::isfinite(kp) || !std::isfinite(ki) || !std::isfinite(setpoint)) {
    throw InvalidArgument("PiConfig: gains and setpoint must be finite");
  }
  if (!(dt > 0)) throw InvalidArgument("PiConfig: dt must be > 0");
  if (!(clamp > 0)) throw InvalidArgument("PiConfig: clamp must be > 0");
  if (!(error_scale > 0) || !std::isfinite(error_scale)) throw InvalidArgument("PiConfig: error_scale must be > 0");
}

PiStep pi_step(const PiState& state, double measurement, const PiConfig& cfg) {
  if (!std::isfinite(measurement)) throw InvalidArgument("pi_step: non-finite measurement");
  const double e = cfg.error_scale * (cfg.setpoint - measurement);
  const double advanced = state.integrator + cfg.ki * e * cfg.dt;
  const double candidate = cfg.kp * e + advanced;
  PiStep out;
  out.state.integrator = state.integrator;
  if (std::abs(candidate) <= cfg.clamp) out.state.integrator = std::clamp(advanced, -cfg.clamp, cfg.clamp);
  out.output = std::clamp(candidate, -cfg.clamp, cfg.clamp);
  out.state.last_output = out.output;
  return out;
}

LoopRecord closed_loop_run(const SensorSetup& sensor, const PiConfig& pi, double duration, const LoopOptions& opts) {
  sensor.validate();
  pi.validate();
  if (!(duration > 0)) throw InvalidArgument("closed_loop_run: duration must be > 0");
  const double settle = opts.settle_time >= 0 ? opts.settle_time : 20.0 * sensor.lockin.time_constant;
  if ((duration + settle) * sensor.input_rate() > kMaxSynthSamples) {
    throw ResourceLimit("closed_loop_run: more than 1e9 samples requested");
  }

  Synthesizer synth(sensor.nv, sensor.drive, sensor.field, sensor.noise, sensor.detector);
  Lockin lockin(sensor.lockin, synth.sample_period());
  PiConfig cfg = pi;
  cfg.dt = lockin.output_period();

  LoopRecord rec;
  const auto total = static_cast<std::uint64_t>(std::llround((duration + settle) * sensor.input_rate()));
  const auto periods = static_cast<std::size_t>(std::llround(duration / cfg.dt));
  rec.time.reserve(periods);
  rec.error.reserve(periods);
  rec.pi_output.reserve(periods);
  rec.field_estimate.reserve(periods);

  double baseline_ss = 0.0;
  std::size_t baseline_n = 0;
  PiState state;
  std::size_t excursion = 0;
  for (std::uint64_t n = 0; n < total; ++n) {
    const double t = synth.time();
    const auto s = lockin.push(synth.next());
    if (!s) continue;
    const double error = cfg.setpoint - s->i;
    if (t < settle) {
      if (t >= 0.5 * settle) {
        baseline_ss += error * error;
        ++baseline_n;
      }
      continue;
    }
    if (rec.time.empty()) {
      rec.baseline_rms = baseline_n ? std::sqrt(baseline_ss / static_cast<double>(baseline_n)) : 0.0;
    }
    const auto step = pi_step(state, s->i, cfg);
    state = step.state;
    synth.set_carrier_offset(step.output);
    rec.time.push_back(s->t);
    rec.error.push_back(error);
    rec.pi_output.push_back(step.output);
    rec.field_estimate.push_back(step.output / sensor.nv.gamma_e);

    const double limit = opts.lock_loss_factor * std::max(rec.baseline_rms, 1e-300);
    excursion = std::abs(error) > limit ? excursion + 1 : 0;
    if (rec.locked && excursion > opts.lock_loss_periods) {
      rec.locked = false;
      rec.unlock_time = s->t;
    }
  }
  return rec;
}

LoopRecord open_loop_run(const SensorSetup& sensor, double zc_slope, double duration, double settle) {
  if (!(zc_slope != 0.0) || !std::isfinite(zc_slope)) throw InvalidArgument("open_loop_run: zero discriminator slope");
  const double skip = settle >= 0 ? settle : 20.0 * sensor.lockin.time_constant;
  const auto iq = record_lockin(sensor, duration, skip);
  LoopRecord rec;
  const std::size_t n = iq.i_phase.size();
  rec.time.resize(n);
  rec.error.resize(n);
  rec.pi_output.assign(n, 0.0);
  rec.field_estimate.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    rec.time[k] = iq.i_phase.time(k);
    rec.error[k] = -iq.i_phase.values[k];
    rec.field_estimate[k] = rec.error[k] / (zc_slope * sensor.nv.gamma_e);
  }
  double ss = 0.0;
  for (double e : rec.error) ss += e * e;
  rec.baseline_rms = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  return rec;
}

double measure_discriminator_slope(const SensorSetup& sensor, double delta, double dwell) {
  if (!(delta > 0)) throw InvalidArgument("measure_discriminator_slope: delta must be > 0");
  const double fc = sensor.drive.carrier;
  const double discard = std::min(20.0 * sensor.lockin.time_constant, 0.5 * dwell);
  const auto hi = settled_reading(sensor.with_carrier(fc + delta), dwell, discard);
  const auto lo = settled_reading(sensor.with_carrier(fc - delta).with_seed(derive_seed(sensor.noise.seed, 1)), dwell,
                                  discard);
  return (hi.i - lo.i) / (2.0 * delta);
}

double linear_range(const std::vector<double>& applied, const std::vector<double>& measured, double tolerance) {
  if (applied.size() != measured.size()) throw InvalidArgument("linear_range: length mismatch");
  double range = 0.0;
  for (std::size_t k = 0; k < applied.size(); ++k) {
    if (std::abs(measured[k] - applied[k]) <= tolerance * std::abs(applied[k])) range = std::max(range, applied[k]);
  }
  return range;
}

DynamicRangeResult dynamic_range_experiment(const SensorSetup& sensor, const PiConfig& pi, double zc_slope,
                                            const DynamicRangePlan& plan) {
  sensor.validate();
  if (!(plan.max_field > 0) || plan.n_steps < 2) throw InvalidArgument("dynamic_range_experiment: bad plan");
  const double min_field = plan.min_field > 0 ? plan.min_field : plan.max_field / 1000.0;
  if (!(min_field < plan.max_field)) throw InvalidArgument("dynamic_range_experiment: min_field >= max_field");

  DynamicRangeResult out;
  out.applied.resize(plan.n_steps);
  const double ratio = std::pow(plan.max_field / min_field, 1.0 / static_cast<double>(plan.n_steps - 1));
  for (std::size_t k = 0; k < plan.n_steps; ++k) out.applied[k] = min_field * std::pow(ratio, static_cast<double>(k));

  const double tau = sensor.lockin.time_constant;
  const double gamma = sensor.nv.gamma_e;

  auto open_reading = [&](double field, std::uint64_t index) {
    SensorSetup point = sensor.with_seed(derive_seed(sensor.noise.seed, index));
    point.field.kind = FieldKind::constant;
    point.field.amplitude = field;
    const auto r = settled_reading(point, plan.open_dwell, std::min(20.0 * tau, 0.5 * plan.open_dwell));
    return -r.i / (zc_slope * gamma);
  };
  const double open_zero = open_reading(0.0, 999);
  out.measured_open.resize(plan.n_steps);
  for (std::size_t k = 0; k < plan.n_steps; ++k) out.measured_open[k] = open_reading(out.applied[k], 1000 + k) - open_zero;

  // One continuous staircase so the loop tracks each increment from lock.
  // Stair 0 holds zero field and provides the offset reference.
  const double settle = 20.0 * tau;
  const double profile_dt = 5e-3;
  const std::size_t n_stairs = plan.n_steps + 1;
  std::vector<double> level(n_stairs, 0.0);
  std::copy(out.applied.begin(), out.applied.end(), level.begin() + 1);
  std::vector<double> stair_start(n_stairs), stair_end(n_stairs);
  double t = settle;
  for (std::size_t k = 0; k < n_stairs; ++k) {
    stair_start[k] = t;
    t += k == 0 ? plan.first_hold : plan.hold_time;
    stair_end[k] = t;
  }
  const double total = t;
  SensorSetup stairs = sensor;
  stairs.field.kind = FieldKind::replay;
  stairs.field.samples = TimeSeries{};
  stairs.field.samples.dt = profile_dt;
  stairs.field.samples.unit = "T";
  const auto np = static_cast<std::size_t>(std::ceil(total / profile_dt)) + 1;
  stairs.field.samples.values.resize(np);
  for (std::size_t i = 0; i < np; ++i) {
    const double ti = static_cast<double>(i) * profile_dt;
    double v = 0.0;
    for (std::size_t k = 0; k < n_stairs && ti >= stair_start[k]; ++k) v = level[k];
    stairs.field.samples.values[i] = v;
  }
  LoopOptions opts;
  opts.settle_time = settle;
  const auto rec = closed_loop_run(stairs, pi, total - settle, opts);

  std::vector<double> sums(n_stairs, 0.0);
  std::vector<std::size_t> counts(n_stairs, 0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double ti = rec.time[i];
    while (k < n_stairs && ti >= stair_end[k]) ++k;
    if (k == n_stairs) break;
    const double window_start = stair_end[k] - 0.5 * (stair_end[k] - stair_start[k]);
    if (ti >= window_start) {
      sums[k] += rec.field_estimate[i];
      ++counts[k];
    }
  }
  for (std::size_t j = 0; j < n_stairs; ++j) {
    if (counts[j]) sums[j] /= static_cast<double>(counts[j]);
  }
  out.measured_closed.resize(plan.n_steps);
  for (std::size_t j = 0; j < plan.n_steps; ++j) out.measured_closed[j] = sums[j + 1] - sums[0];

  out.range_open = linear_range(out.applied, out.measured_open, plan.tolerance);
  out.range_closed = linear_range(out.applied, out.measured_closed, plan.tolerance);
  return out;
}

void write_loop_csv(const std::filesystem::path& path, const LoopRecord& record) {
  csv::write_columns(path, {"t_s", "error_v", "pi_hz", "field_T"},
                     {&record.time, &record.error, &record.pi_output, &record.field_estimate});
}

void write_dynamic_range_csv(const std::filesystem::path& path, const DynamicRangeResult& result) {
  csv::write_columns(path, {"applied_T", "open_T", "closed_T"},
                     {&result.applied, &result.measured_open, &result.measured_closed});
}

}  // namespace qmagpi
