#include "qmagpi/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "qmagpi/csv.hpp"
#include "qmagpi/error.hpp"

#ifndef QMAGPI_VERSION
#define QMAGPI_VERSION "0.0.0"
#endif

namespace qmagpi {

using nlohmann::json;

const char* version() { return QMAGPI_VERSION; }

namespace {

constexpr std::array<const char*, 7> kScenarioNames{"odmr", "track", "dynrange", "allan", "psd", "replay", "calibrate"};

}  // namespace

ScenarioKind parse_scenario_kind(const std::string& name) {
  for (std::size_t k = 0; k < kScenarioNames.size(); ++k) {
    if (name == kScenarioNames[k]) return static_cast<ScenarioKind>(k);
  }
  throw ConfigError("scenario", "unknown scenario '" + name + "'");
}

const char* scenario_name(ScenarioKind kind) { return kScenarioNames[static_cast<std::size_t>(kind)]; }

SensorSetup reference_sensor() {
  SensorSetup s;
  s.field.bias = bias_for_projections(s.nv, kDefaultProjections);
  s.field.axis_index = 1;
  s.drive.carrier = s.nv.zero_field_splitting + kDefaultProjections[0];
  s.drive.deviation = 100e3;
  s.detector.responsivity_gain = 3.0e-15;
  s.noise.shot_noise = true;
  s.noise.electronic_psd = 6.7e-12;
  s.noise.seed = 1;
  return s;
}

double line_frequency(const SensorSetup& sensor, int axis, int branch) {
  if (axis < 0 || axis > 3 || (branch != 1 && branch != -1)) throw InvalidArgument("line_frequency: bad axis or branch");
  for (const auto& line : resonance_frequencies(sensor.nv, sensor.field.bias)) {
    if (line.axis_index == axis && line.branch == branch && line.hyperfine_index == 0) return line.frequency;
  }
  throw InvalidArgument("line_frequency: line not found");
}

SweepPlan window_around(double f0, double half_width, std::size_t n_points, double dwell) {
  SweepPlan p;
  p.f_start = f0 - half_width;
  p.f_stop = f0 + half_width;
  p.n_points = n_points;
  p.dwell = dwell;
  return p;
}

namespace {

// Carrier at least ten linewidths from `near` where the summed dips are smallest.
double quiet_frequency(const SensorSetup& sensor, double near) {
  const auto lines = resonance_frequencies(sensor.nv, sensor.field.bias);
  const double gap = 10.0 * sensor.nv.linewidth;
  double best = near + gap;
  double best_pl = -1.0;
  for (double f = near - 50e6; f <= near + 50e6; f += 0.1e6) {
    if (std::abs(f - near) < gap) continue;
    const double pl = odmr_fluorescence(sensor.nv, lines, f);
    if (pl > best_pl + 1e-15) {
      best_pl = pl;
      best = f;
    }
  }
  return best;
}

double wrap_phase(double phase) {
  constexpr double pi = std::numbers::pi;
  while (phase > pi) phase -= 2.0 * pi;
  while (phase <= -pi) phase += 2.0 * pi;
  return phase;
}

}  // namespace

LockPoint acquire_lock_point(SensorSetup& sensor, const SweepPlan& plan, double slope_sign, bool auto_phase,
                             std::vector<std::string>* warnings) {
  LockPoint lp;
  lp.spectrum = odmr_sweep(sensor, plan, warnings);
  if (auto_phase) {
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t k = 0; k < lp.spectrum.size(); ++k) {
      const double m = std::hypot(lp.spectrum.i_phase[k], lp.spectrum.quadrature[k]);
      if (m > best_mag) {
        best_mag = m;
        best = k;
      }
    }
    const double duration = std::max(1.0, 100.0 * sensor.lockin.time_constant);
    const SensorSetup probe = sensor.with_carrier(lp.spectrum.freqs[best]).with_seed(derive_seed(sensor.noise.seed, 77));
    const double phase = calibrate_phase(probe, duration);
    const double d = phase - sensor.lockin.phase;
    const double c = std::cos(d), s = std::sin(d);
    for (std::size_t k = 0; k < lp.spectrum.size(); ++k) {
      const double i = lp.spectrum.i_phase[k], q = lp.spectrum.quadrature[k];
      lp.spectrum.i_phase[k] = i * c + q * s;
      lp.spectrum.quadrature[k] = q * c - i * s;
    }
    sensor.lockin.phase = phase;
  }
  lp.fit = fit_triplet(lp.spectrum, initial_guess(lp.spectrum, sensor.nv.hyperfine_split));
  sensor.drive.carrier = lp.fit.center;
  const double dwell = std::max(0.3, 40.0 * sensor.lockin.time_constant);
  lp.zc_slope = measure_discriminator_slope(sensor.noiseless(), 0.02 * lp.fit.gamma, dwell);
  if (slope_sign * lp.zc_slope < 0) {
    sensor.lockin.phase = wrap_phase(sensor.lockin.phase + std::numbers::pi);
    for (auto& v : lp.spectrum.i_phase) v = -v;
    for (auto& v : lp.spectrum.quadrature) v = -v;
    lp.fit.amplitude = -lp.fit.amplitude;
    lp.fit.baseline = -lp.fit.baseline;
    lp.fit.zc_slope = -lp.fit.zc_slope;
    lp.zc_slope = -lp.zc_slope;
  }
  lp.phase = sensor.lockin.phase;
  return lp;
}

PiConfig normalized_pi(const PiConfig& pi, double zc_slope, double loop_gain) {
  if (zc_slope == 0.0 || !std::isfinite(zc_slope)) throw InvalidArgument("normalized_pi: zero slope");
  if (!(loop_gain > 0)) throw InvalidArgument("normalized_pi: loop_gain must be > 0");
  PiConfig out = pi;
  out.error_scale = loop_gain / std::abs(zc_slope);
  return out;
}

CoilCalibration calibrate_coil(const SensorSetup& sensor, double coil_constant, const std::vector<double>& currents,
                               const SweepPlan& plan) {
  if (currents.size() < 5) throw InvalidArgument("calibrate_coil: need at least five currents");
  if (std::all_of(currents.begin(), currents.end(), [&](double c) { return c == currents.front(); })) {
    throw InvalidArgument("calibrate_coil: degenerate sweep, all currents are equal");
  }
  if (!std::isfinite(coil_constant)) throw InvalidArgument("calibrate_coil: coil constant must be finite");
  SensorSetup base = sensor;
  base.field.kind = FieldKind::constant;
  base.field.amplitude = 0.0;
  acquire_lock_point(base, plan, 1.0);

  CoilCalibration out;
  out.currents = currents;
  for (std::size_t k = 0; k < currents.size(); ++k) {
    SensorSetup s = base.with_seed(derive_seed(sensor.noise.seed, 100 + k));
    s.field.amplitude = coil_constant * currents[k];
    const auto spec = odmr_sweep(s, plan);
    out.centers.push_back(fit_triplet(spec, initial_guess(spec, s.nv.hyperfine_split)).center);
  }
  const auto lf = linear_fit(out.currents, out.centers);
  out.slope_hz_per_a = lf.slope;
  out.slope_stderr = lf.slope_stderr;
  out.slope_t_per_a = lf.slope / sensor.nv.gamma_e;
  return out;
}

TimeSeries elevator_profile(double peak, double dt) {
  if (!(dt > 0)) throw InvalidArgument("elevator_profile: dt must be > 0");
  constexpr double floor_height = 3.35;  // m
  constexpr double sensor_height = 2.0 * floor_height;
  constexpr double spread = 2.0;  // m, distance at which the car's field halves
  auto coupling = [](double z) {
    const double u = (z - sensor_height) / spread;
    return 1.0 / (1.0 + u * u);
  };
  auto ease = [](double x) { return x <= 0 ? 0.0 : x >= 1 ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * x); };
  // (start time, end time, floor) of each move
  constexpr std::array<std::array<double, 3>, 3> moves{{{5, 10, 1}, {15, 20, 2}, {30, 35, 3}}};
  auto position = [&](double t) {
    double z = 0.0;
    for (const auto& m : moves) {
      const double from = (m[2] - 1.0) * floor_height;
      if (t >= m[0]) z = from + floor_height * ease((t - m[0]) / (m[1] - m[0]));
    }
    return z;
  };
  // Door cycle at the sensor floor: opens over 22-23 s, closes over 27-28 s.
  auto door = [&](double t) { return ease(t - 22.0) - ease(t - 27.0); };

  const double duration = 45.0;
  const double norm = coupling(sensor_height) - coupling(0.0);
  TimeSeries ts;
  ts.dt = dt;
  ts.unit = "T";
  const auto n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
  ts.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    ts.values[i] = peak * ((coupling(position(t)) - coupling(0.0)) / norm + 0.15 * door(t));
  }
  return ts;
}

TrackResult square_wave_tracking(const SensorSetup& sensor, double zc_slope, const TrackPlan& plan) {
  if (zc_slope == 0.0) throw InvalidArgument("square_wave_tracking: zero slope");
  if (plan.traces < 1 || !(plan.frequency > 0) || !(plan.duration > 0)) {
    throw InvalidArgument("square_wave_tracking: bad plan");
  }
  const double tau = sensor.lockin.time_constant;
  const double gamma = sensor.nv.gamma_e;
  const double half = 0.5 / plan.frequency;
  const double guard = 10.0 * tau;

  TrackResult out;
  std::vector<double> pooled;
  std::vector<double> window;
  std::size_t window_len = 0;
  for (std::size_t j = 0; j < plan.traces; ++j) {
    SensorSetup s = sensor.with_seed(derive_seed(sensor.noise.seed, j));
    s.field.kind = FieldKind::square;
    s.field.amplitude = plan.amplitude;
    s.field.frequency = plan.frequency;
    const auto iq = record_lockin(s, plan.duration, 20.0 * tau);
    const auto& i = iq.i_phase;
    std::vector<double> field(i.size());
    for (std::size_t k = 0; k < i.size(); ++k) field[k] = -i.values[k] / (zc_slope * gamma);
    const double m = mean(field);
    for (auto& v : field) v -= m;

    if (j == 0) {
      out.averaged = i;
      out.averaged.unit = "T";
      out.averaged.values.assign(i.size(), 0.0);
      out.first = out.averaged;
      out.first.values = field;
      window_len = static_cast<std::size_t>(std::llround(plan.window / i.dt));
    }
    const std::size_t n = std::min(field.size(), out.averaged.size());
    for (std::size_t k = 0; k < n; ++k) {
      out.averaged.values[k] += field[k] / static_cast<double>(plan.traces);
      const double t = i.time(k);
      const double since_edge = t - half * std::floor(t / half);
      if (since_edge < guard) continue;
      const double r = field[k] - s.field.value_at(t);
      pooled.push_back(r);
      if (j == 0 && window.size() < window_len) window.push_back(r);
    }
  }

  double hi = 0.0, lo = 0.0;
  std::size_t n_hi = 0, n_lo = 0;
  SensorSetup ref = sensor;
  ref.field.kind = FieldKind::square;
  ref.field.amplitude = plan.amplitude;
  ref.field.frequency = plan.frequency;
  for (std::size_t k = 0; k < out.averaged.size(); ++k) {
    const double t = out.averaged.time(k);
    if (t - half * std::floor(t / half) < guard) continue;
    if (ref.field.value_at(t) > 0) {
      hi += out.averaged.values[k];
      ++n_hi;
    } else {
      lo += out.averaged.values[k];
      ++n_lo;
    }
  }
  if (n_hi == 0 || n_lo == 0) throw InvalidArgument("square_wave_tracking: record shorter than one period");
  out.amplitude = 0.5 * (hi / static_cast<double>(n_hi) - lo / static_cast<double>(n_lo));
  out.sigma_single = gaussian_fit(pooled).sigma;
  out.sigma_predicted = predicted_i_sigma(sensor) / (std::abs(zc_slope) * gamma);
  const LowPassFilter lp(tau, 1.0 / sensor.input_rate());
  out.sensitivity = out.sigma_single / std::sqrt(2.0 * lp.enbw());
  if (window.size() >= 100) out.window_fit = gaussian_fit(window);
  return out;
}

NoiseSpectrum noise_spectrum(const SensorSetup& sensor, double zc_slope, const PsdPlan& plan) {
  if (plan.traces < 1) throw InvalidArgument("noise_spectrum: need at least one trace");
  std::vector<PsdResult> spectra;
  spectra.reserve(plan.traces);
  for (std::size_t j = 0; j < plan.traces; ++j) {
    const auto iq = record_lockin(sensor.with_seed(derive_seed(sensor.noise.seed, j)), plan.duration,
                                  20.0 * sensor.lockin.time_constant);
    spectra.push_back(psd(iq.i_phase, plan.segments, plan.overlap, plan.window));
  }
  NoiseSpectrum out;
  out.spectrum = average_psd(spectra);
  scale_to_field(out.spectrum, zc_slope, sensor.nv.gamma_e);
  const LowPassFilter lp(sensor.lockin.time_constant, 1.0 / sensor.input_rate());
  deembed(out.spectrum, [&lp](double f) { return lp.power_response(f); });
  out.floor = field_noise_floor(out.spectrum, plan.band_lo, plan.band_hi);
  return out;
}

// --- configuration ---------------------------------------------------------

namespace {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError(where(key), "required key is missing");
  }

  const json* get(const std::string& key) {
    if (!has(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) throw ConfigError(where(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(where(key), "must be finite");
    }
  }

  void count(const std::string& key, std::size_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        throw ConfigError(where(key), "expected a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key), "expected an integer");
      out = v->get<int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) throw ConfigError(where(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  bool numbers(const std::string& key, std::vector<double>& out) {
    const json* v = get(key);
    if (!v) return false;
    if (!v->is_array()) throw ConfigError(where(key), "expected an array of numbers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number()) throw ConfigError(where(key), "expected an array of numbers");
      out.push_back(e.get<double>());
      if (!std::isfinite(out.back())) throw ConfigError(where(key), "must be finite");
    }
    return true;
  }

  std::optional<Reader> section(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    return Reader(*v, where(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError(where(item.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class F>
void checked(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(section, e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void parse_sweep(Reader& r, SweepPlan& p) {
  r.number("f_start", p.f_start);
  r.number("f_stop", p.f_stop);
  r.count("n_points", p.n_points);
  r.number("dwell", p.dwell);
  r.number("settle_tau", p.settle_tau);
  r.finish();
  if (!(p.f_start < p.f_stop)) throw ConfigError(r.where("f_stop"), "must exceed f_start");
  if (p.n_points < 10) throw ConfigError(r.where("n_points"), "need at least 10 points");
  if (!(p.dwell > 0)) throw ConfigError(r.where("dwell"), "must be > 0");
}

}  // namespace

ScenarioConfig parse_config(const std::string& text, ScenarioKind kind, const std::filesystem::path& base_dir,
                            std::optional<std::uint64_t> seed_override) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::string msg = e.what();
    throw ConfigError("", "malformed JSON at byte " + std::to_string(e.byte) + ": " + msg);
  }
  Reader r(root, "");
  ScenarioConfig cfg;
  cfg.kind = kind;
  cfg.sensor = reference_sensor();
  SensorSetup& s = cfg.sensor;

  if (r.has("scenario")) {
    std::string name;
    r.string("scenario", name);
    if (parse_scenario_kind(name) != kind) {
      throw ConfigError("scenario", "file is for '" + name + "', not '" + scenario_name(kind) + "'");
    }
  }
  if (!seed_override) r.require("seed");
  if (const json* v = r.get("seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("seed", "expected a non-negative integer");
    cfg.seed = v->get<std::uint64_t>();
  }
  if (seed_override) cfg.seed = *seed_override;
  s.noise.seed = cfg.seed;
  if (r.has("output_dir")) {
    std::string dir;
    r.string("output_dir", dir);
    cfg.output_dir = resolve(base_dir, dir);
  }

  if (auto sec = r.section("nv")) {
    sec->number("zero_field_splitting", s.nv.zero_field_splitting);
    sec->number("gamma_e", s.nv.gamma_e);
    sec->number("hyperfine_split", s.nv.hyperfine_split);
    sec->number("linewidth", s.nv.linewidth);
    sec->number("contrast", s.nv.contrast);
    sec->number("photon_rate", s.nv.photon_rate);
    sec->number("temp_coefficient", s.nv.temp_coefficient);
    sec->finish();
  }
  checked("nv", [&] { s.nv.validate(); });
  // The bias follows the (possibly overridden) NV parameters.
  s.field.bias = bias_for_projections(s.nv, kDefaultProjections);
  s.drive.carrier = s.nv.zero_field_splitting + kDefaultProjections[0];

  if (auto sec = r.section("bias")) {
    std::vector<double> v;
    const bool proj = sec->numbers("projections", v);
    if (proj) {
      if (v.size() != 4) throw ConfigError(sec->where("projections"), "expected four shifts in Hz");
      checked("bias.projections", [&] { s.field.bias = bias_for_projections(s.nv, {v[0], v[1], v[2], v[3]}); });
    }
    if (sec->numbers("vector", v)) {
      if (proj) throw ConfigError(sec->where("vector"), "give either projections or vector, not both");
      if (v.size() != 3) throw ConfigError(sec->where("vector"), "expected three components in T");
      s.field.bias.vector = {v[0], v[1], v[2]};
    }
    sec->finish();
  }
  checked("bias", [&] { s.field.bias.validate(); });

  if (auto sec = r.section("drive")) {
    sec->number("carrier", s.drive.carrier);
    sec->number("deviation", s.drive.deviation);
    sec->number("mod_rate", s.drive.mod_rate);
    sec->finish();
  }
  checked("drive", [&] { s.drive.validate(); });
  s.lockin.mod_rate = s.drive.mod_rate;

  if (auto sec = r.section("detector")) {
    sec->number("responsivity_gain", s.detector.responsivity_gain);
    sec->number("sample_rate", s.detector.sample_rate);
    sec->boolean("laser_on", s.detector.laser_on);
    sec->finish();
  }
  checked("detector", [&] { s.detector.validate(); });

  if (auto sec = r.section("lockin")) {
    sec->boolean("auto_phase", cfg.auto_phase);
    sec->number("phase", s.lockin.phase);
    sec->number("time_constant", s.lockin.time_constant);
    sec->number("hp_cutoff", s.lockin.hp_cutoff);
    sec->number("out_rate", s.lockin.out_rate);
    sec->finish();
  }
  checked("lockin", [&] { s.lockin.check(s.input_rate()); });

  if (auto sec = r.section("noise")) {
    sec->boolean("shot_noise", s.noise.shot_noise);
    sec->number("electronic_psd", s.noise.electronic_psd);
    sec->number("drift_rw", s.noise.drift_rw);
    if (auto temp = sec->section("temperature")) {
      if (temp->has("csv")) {
        std::string p;
        temp->string("csv", p);
        checked("noise.temperature.csv", [&] {
          const auto table = csv::read(resolve(base_dir, p), {"t_s", "delta_K"});
          TimeSeries ts;
          const auto& t = table.columns[0];
          if (t.size() < 2) throw InvalidArgument("need at least two rows");
          ts.t0 = t.front();
          ts.dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
          ts.values = table.columns[1];
          ts.unit = "K";
          s.noise.temperature = ts;
        });
      } else {
        double rate = 0.0, duration = 0.0;
        temp->require("ramp");
        temp->require("duration");
        temp->number("ramp", rate);
        temp->number("duration", duration);
        if (!(duration > 0)) throw ConfigError(temp->where("duration"), "must be > 0");
        TimeSeries ts;
        ts.dt = 0.1;
        ts.unit = "K";
        const auto n = static_cast<std::size_t>(std::ceil(duration / ts.dt)) + 1;
        for (std::size_t k = 0; k < n; ++k) ts.values.push_back(rate * static_cast<double>(k) * ts.dt);
        s.noise.temperature = ts;
      }
      temp->finish();
    }
    sec->finish();
  }
  checked("noise", [&] { s.noise.validate(); });

  if (auto sec = r.section("field")) {
    std::string kind_name = "constant";
    sec->string("kind", kind_name);
    if (kind_name == "constant") {
      s.field.kind = FieldKind::constant;
    } else if (kind_name == "square") {
      s.field.kind = FieldKind::square;
    } else if (kind_name == "ramp") {
      s.field.kind = FieldKind::ramp;
    } else if (kind_name == "replay") {
      s.field.kind = FieldKind::replay;
    } else {
      throw ConfigError(sec->where("kind"), "expected constant, square, ramp or replay");
    }
    sec->number("amplitude", s.field.amplitude);
    sec->number("frequency", s.field.frequency);
    sec->number("rate", s.field.rate);
    sec->integer("axis", s.field.axis_index);
    if (sec->has("csv")) {
      std::string p;
      sec->string("csv", p);
      checked("field.csv", [&] { s.field.samples = read_field_csv(resolve(base_dir, p)); });
    } else if (s.field.kind == FieldKind::replay) {
      throw ConfigError(sec->where("csv"), "required key is missing for a replay field");
    }
    sec->finish();
  }
  checked("field", [&] { s.field.validate(); });

  if (auto sec = r.section("pi")) {
    sec->number("kp", cfg.pi.kp);
    sec->number("ki", cfg.pi.ki);
    sec->number("setpoint", cfg.pi.setpoint);
    sec->number("clamp", cfg.pi.clamp);
    sec->number("loop_gain", cfg.loop_gain);
    sec->finish();
  }
  checked("pi", [&] { cfg.pi.validate(); });
  if (!(cfg.loop_gain > 0)) throw ConfigError("pi.loop_gain", "must be > 0");

  if (auto sec = r.section("sweep")) {
    SweepPlan p;
    parse_sweep(*sec, p);
    cfg.sweep = p;
  }

  const std::string own = scenario_name(kind);
  r.require(own);
  for (const char* name : kScenarioNames) {
    if (name != own && r.has(name)) {
      throw ConfigError(name, std::string("section belongs to the '") + name + "' scenario");
    }
  }
  auto sec = r.section(own);
  switch (kind) {
    case ScenarioKind::odmr:
      break;
    case ScenarioKind::track: {
      auto& p = cfg.track;
      sec->number("amplitude", p.amplitude);
      sec->number("frequency", p.frequency);
      sec->number("duration", p.duration);
      sec->count("traces", p.traces);
      sec->number("window", p.window);
      if (p.traces < 1) throw ConfigError(sec->where("traces"), "must be >= 1");
      if (!(p.frequency > 0)) throw ConfigError(sec->where("frequency"), "must be > 0");
      if (!(p.duration * p.frequency >= 1.0)) throw ConfigError(sec->where("duration"), "need a full square period");
      break;
    }
    case ScenarioKind::dynrange: {
      auto& p = cfg.dynrange;
      sec->number("max_field", p.max_field);
      sec->number("min_field", p.min_field);
      sec->count("n_steps", p.n_steps);
      sec->number("hold_time", p.hold_time);
      sec->number("first_hold", p.first_hold);
      sec->number("open_dwell", p.open_dwell);
      sec->number("tolerance", p.tolerance);
      if (!(p.max_field > 0)) throw ConfigError(sec->where("max_field"), "must be > 0");
      if (p.n_steps < 2) throw ConfigError(sec->where("n_steps"), "need at least 2 steps");
      break;
    }
    case ScenarioKind::allan: {
      auto& p = cfg.allan;
      sec->number("duration", p.duration);
      sec->string("mode", p.mode);
      sec->count("per_decade", p.per_decade);
      sec->number("confidence", p.confidence);
      std::string edf = "white_fm";
      sec->string("edf", edf);
      if (edf == "white_fm") {
        p.edf = EdfModel::white_fm;
      } else if (edf == "conservative") {
        p.edf = EdfModel::conservative;
      } else {
        throw ConfigError(sec->where("edf"), "expected white_fm or conservative");
      }
      sec->boolean("write_trace", p.write_trace);
      if (p.mode != "open" && p.mode != "insensitive" && p.mode != "closed") {
        throw ConfigError(sec->where("mode"), "expected open, insensitive or closed");
      }
      if (!(p.duration > 0)) throw ConfigError(sec->where("duration"), "must be > 0");
      if (p.per_decade < 1) throw ConfigError(sec->where("per_decade"), "must be >= 1");
      if (!(p.confidence > 0 && p.confidence < 1)) throw ConfigError(sec->where("confidence"), "must lie in (0, 1)");
      break;
    }
    case ScenarioKind::psd: {
      auto& p = cfg.psd;
      sec->number("duration", p.duration);
      sec->count("traces", p.traces);
      sec->count("segments", p.segments);
      sec->number("overlap", p.overlap);
      std::string window = "hann";
      sec->string("window", window);
      if (window == "hann") {
        p.window = Window::hann;
      } else if (window == "rectangular") {
        p.window = Window::rectangular;
      } else {
        throw ConfigError(sec->where("window"), "expected hann or rectangular");
      }
      std::vector<double> band;
      if (sec->numbers("band", band)) {
        if (band.size() != 2 || !(band[0] < band[1])) throw ConfigError(sec->where("band"), "expected [lo, hi] in Hz");
        p.band_lo = band[0];
        p.band_hi = band[1];
      }
      if (const json* v = sec->get("cases")) {
        if (!v->is_array() || v->empty()) throw ConfigError(sec->where("cases"), "expected a non-empty array");
        cfg.psd_cases.clear();
        for (const auto& e : *v) {
          if (!e.is_string()) throw ConfigError(sec->where("cases"), "expected case names");
          const auto name = e.get<std::string>();
          if (name != "sensitive" && name != "insensitive" && name != "laser_off") {
            throw ConfigError(sec->where("cases"), "unknown case '" + name + "'");
          }
          cfg.psd_cases.push_back(name);
        }
      }
      if (p.traces < 1) throw ConfigError(sec->where("traces"), "must be >= 1");
      if (p.segments < 1) throw ConfigError(sec->where("segments"), "must be >= 1");
      if (!(p.duration > 0)) throw ConfigError(sec->where("duration"), "must be > 0");
      if (!(p.overlap >= 0 && p.overlap < 1)) throw ConfigError(sec->where("overlap"), "must lie in [0, 1)");
      break;
    }
    case ScenarioKind::replay: {
      auto& p = cfg.replay;
      if (sec->has("csv")) {
        std::string path;
        sec->string("csv", path);
        p.csv = resolve(base_dir, path);
      }
      sec->number("peak", p.peak);
      sec->number("dt", p.dt);
      sec->number("smoothing_sigma", p.smoothing_sigma);
      if (!(p.dt > 0)) throw ConfigError(sec->where("dt"), "must be > 0");
      if (!(p.smoothing_sigma > 0)) throw ConfigError(sec->where("smoothing_sigma"), "must be > 0");
      break;
    }
    case ScenarioKind::calibrate: {
      auto& p = cfg.calibrate;
      sec->require("coil_constant");
      sec->number("coil_constant", p.coil_constant);
      sec->numbers("currents", p.currents);
      sec->integer("axis", p.axis);
      sec->number("half_width", p.half_width);
      sec->count("n_points", p.n_points);
      sec->number("dwell", p.dwell);
      if (p.currents.size() < 5) throw ConfigError(sec->where("currents"), "need at least five currents");
      if (std::all_of(p.currents.begin(), p.currents.end(), [&](double c) { return c == p.currents.front(); })) {
        throw ConfigError(sec->where("currents"), "degenerate sweep, all currents are equal");
      }
      if (p.axis < 0 || p.axis > 3) throw ConfigError(sec->where("axis"), "must be 0..3");
      if (!(p.half_width > 0)) throw ConfigError(sec->where("half_width"), "must be > 0");
      if (p.n_points < 10) throw ConfigError(sec->where("n_points"), "need at least 10 points");
      if (!(p.dwell > 0)) throw ConfigError(sec->where("dwell"), "must be > 0");
      break;
    }
  }
  sec->finish();
  r.finish();

  root["seed"] = cfg.seed;
  cfg.echo = root.dump(2);
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path, ScenarioKind kind,
                           std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), kind, path.parent_path(), seed_override);
}

// --- scenario runs ---------------------------------------------------------

namespace {

struct Run {
  const ScenarioConfig& cfg;
  std::filesystem::path dir;
  RunSummary summary;

  std::filesystem::path file(const std::string& name) {
    summary.files.push_back(dir / name);
    return dir / name;
  }
  void metric(const std::string& key, double value) { summary.metrics.emplace_back(key, value); }
  double slope_sign() const { return cfg.pi.kp != 0 ? (cfg.pi.kp > 0 ? 1.0 : -1.0) : (cfg.pi.ki >= 0 ? 1.0 : -1.0); }

  SweepPlan tracking_sweep(const SensorSetup& s) const {
    if (cfg.sweep) return *cfg.sweep;
    return window_around(line_frequency(s, s.field.axis_index, +1), 7.5e6, 151, 0.1);
  }

  LockPoint lock(SensorSetup& s, const SweepPlan& plan) {
    auto lp = acquire_lock_point(s, plan, slope_sign(), cfg.auto_phase, &summary.warnings);
    metric("center_hz", lp.fit.center);
    metric("gamma_hz", lp.fit.gamma);
    metric("zc_slope_v_per_hz", lp.zc_slope);
    metric("phase_rad", lp.phase);
    return lp;
  }
};

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void run_odmr(Run& run) {
  SensorSetup s = run.cfg.sensor;
  const SweepPlan plan = run.cfg.sweep.value_or(SweepPlan{});
  const auto lp = run.lock(s, plan);
  write_spectrum_csv(run.file("spectrum.csv"), lp.spectrum);

  const auto integrated = integrate_spectrum(lp.spectrum);
  csv::write_columns(run.file("integrated.csv"), {"freq_hz", "integrated"}, {&lp.spectrum.freqs, &integrated});

  std::vector<double> f, model;
  const std::size_t n = 10 * (lp.spectrum.size() - 1) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    f.push_back(plan.f_start + (plan.f_stop - plan.f_start) * static_cast<double>(k) / static_cast<double>(n - 1));
    model.push_back(triplet_model(lp.fit, f.back()));
  }
  csv::write_columns(run.file("fit.csv"), {"freq_hz", "model_v"}, {&f, &model});

  run.metric("hf_split_hz", lp.fit.hf_split);
  run.metric("amplitude_v", lp.fit.amplitude);
  run.metric("baseline_v", lp.fit.baseline);
  run.metric("residual_rms_v", lp.fit.residual_rms);
  run.metric("max_slope_v_per_hz", lp.fit.max_slope);
  run.metric("fit_zc_slope_v_per_hz", lp.fit.zc_slope);
  run.metric("fit_iterations", lp.fit.iterations);

  if (s.noise.any()) {
    const auto iq = record_lockin(s.with_seed(derive_seed(s.noise.seed, 500)), 2.0, 20.0 * s.lockin.time_constant);
    const double sigma = std::sqrt(variance(iq.i_phase.values));
    run.metric("sigma_i_v", sigma);
    run.metric("eta_esr_t_rthz", sensitivity_esr(sigma, s.lockin.time_constant, lp.fit.max_slope, s.nv.gamma_e).eta);
  }
  run.metric("shot_noise_limit_t_rthz",
             shot_noise_sensitivity(s.nv.gamma_e, s.nv.linewidth, s.nv.contrast, s.nv.photon_rate));
}

void write_histogram(const std::filesystem::path& path, const GaussianFit& g) {
  std::vector<double> lo, hi, count;
  for (std::size_t b = 0; b < g.counts.size(); ++b) {
    lo.push_back(g.bin_edges[b]);
    hi.push_back(g.bin_edges[b + 1]);
    count.push_back(static_cast<double>(g.counts[b]));
  }
  csv::write_columns(path, {"bin_lo_T", "bin_hi_T", "count"}, {&lo, &hi, &count});
}

LoopRecord as_open_record(const TimeSeries& field, double zc_slope, double gamma) {
  LoopRecord rec;
  for (std::size_t k = 0; k < field.size(); ++k) {
    rec.time.push_back(field.time(k));
    rec.error.push_back(field.values[k] * zc_slope * gamma);
    rec.pi_output.push_back(0.0);
    rec.field_estimate.push_back(field.values[k]);
  }
  return rec;
}

void run_track(Run& run) {
  SensorSetup s = run.cfg.sensor;
  const auto lp = run.lock(s, run.tracking_sweep(s));
  const auto r = square_wave_tracking(s, lp.zc_slope, run.cfg.track);
  write_loop_csv(run.file("track_average.csv"), as_open_record(r.averaged, lp.zc_slope, s.nv.gamma_e));
  write_loop_csv(run.file("track_single.csv"), as_open_record(r.first, lp.zc_slope, s.nv.gamma_e));
  if (!r.window_fit.counts.empty()) write_histogram(run.file("histogram.csv"), r.window_fit);
  run.metric("amplitude_t", r.amplitude);
  run.metric("sigma_single_t", r.sigma_single);
  run.metric("sigma_predicted_t", r.sigma_predicted);
  run.metric("sigma_window_t", r.window_fit.sigma);
  run.metric("sensitivity_t_rthz", r.sensitivity);
}

void run_dynrange(Run& run) {
  SensorSetup s = run.cfg.sensor;
  s.field.kind = FieldKind::constant;
  s.field.amplitude = 0.0;
  const auto lp = run.lock(s, run.tracking_sweep(s));
  const auto pi = normalized_pi(run.cfg.pi, lp.zc_slope, run.cfg.loop_gain);
  const auto r = dynamic_range_experiment(s, pi, lp.zc_slope, run.cfg.dynrange);
  write_dynamic_range_csv(run.file("dynrange.csv"), r);
  run.metric("range_open_t", r.range_open);
  run.metric("range_closed_t", r.range_closed);
  run.metric("range_ratio", r.range_open > 0 ? r.range_closed / r.range_open : std::nan(""));
  run.metric("clamp_limit_t", run.cfg.pi.clamp / s.nv.gamma_e);
}

void allan_output(Run& run, const std::string& name, const TimeSeries& ts) {
  const auto& p = run.cfg.allan;
  const auto taus = allan_tau_grid(ts, p.per_decade);
  if (taus.empty()) throw InvalidArgument("allan: record too short");
  const auto r = overlapping_allan(ts, taus, p.confidence, p.edf);
  write_allan_csv(run.file("allan_" + name + ".csv"), r);
  run.metric(name + "_adev_at_1s", [&] {
    for (std::size_t k = 0; k < r.taus.size(); ++k) {
      if (r.taus[k] >= 1.0) return r.adev[k] * std::sqrt(r.taus[k]);
    }
    return std::nan("");
  }());
  const double lo = std::max(10.0 * ts.dt, 0.05), hi = std::min(1.0, ts.duration() / 10.0);
  if (hi > 2.0 * lo) run.metric(name + "_slope_short", loglog_slope(r.taus, r.adev, lo, hi));
}

TimeSeries series_of(const LoopRecord& rec, const std::vector<double>& values, const char* unit) {
  TimeSeries ts;
  ts.t0 = rec.time.empty() ? 0.0 : rec.time.front();
  ts.dt = rec.size() > 1 ? (rec.time.back() - rec.time.front()) / static_cast<double>(rec.size() - 1) : 1.0;
  ts.values = values;
  ts.unit = unit;
  return ts;
}

void run_allan(Run& run) {
  SensorSetup s = run.cfg.sensor;
  const auto lp = run.lock(s, run.tracking_sweep(s));
  const auto& p = run.cfg.allan;
  const double gamma = s.nv.gamma_e;
  LoopRecord rec;
  if (p.mode == "closed") {
    rec = closed_loop_run(s, normalized_pi(run.cfg.pi, lp.zc_slope, run.cfg.loop_gain), p.duration);
    run.metric("locked", rec.locked ? 1.0 : 0.0);
    allan_output(run, "pi", series_of(rec, rec.field_estimate, "T"));
    std::vector<double> err(rec.size());
    for (std::size_t k = 0; k < rec.size(); ++k) err[k] = rec.error[k] / (lp.zc_slope * gamma);
    allan_output(run, "error", series_of(rec, err, "T"));
  } else {
    SensorSetup point = s;
    if (p.mode == "insensitive") point.drive.carrier = quiet_frequency(s, lp.fit.center);
    rec = open_loop_run(point, lp.zc_slope, p.duration);
    allan_output(run, p.mode, series_of(rec, rec.field_estimate, "T"));
  }
  if (p.write_trace) write_loop_csv(run.file("trace.csv"), rec);
}

void run_psd(Run& run) {
  SensorSetup s = run.cfg.sensor;
  s.field.kind = FieldKind::constant;
  s.field.amplitude = 0.0;
  const auto lp = run.lock(s, run.tracking_sweep(s));
  std::uint64_t index = 0;
  for (const auto& name : run.cfg.psd_cases) {
    SensorSetup c = s.with_seed(derive_seed(s.noise.seed, 9000 + index++));
    if (name == "insensitive") c.drive.carrier = quiet_frequency(s, lp.fit.center);
    if (name == "laser_off") c.detector.laser_on = false;
    const auto ns = noise_spectrum(c, lp.zc_slope, run.cfg.psd);
    write_psd_csv(run.file("psd_" + name + ".csv"), ns.spectrum);
    run.metric(name + "_floor_t_rthz", ns.floor);
  }
}

void run_replay(Run& run) {
  const auto& p = run.cfg.replay;
  const TimeSeries profile = p.csv ? read_field_csv(*p.csv) : elevator_profile(p.peak, p.dt);
  SensorSetup s = run.cfg.sensor;
  s.field.kind = FieldKind::constant;
  s.field.amplitude = profile.values.front();
  const auto lp = run.lock(s, run.tracking_sweep(s));
  s.field.kind = FieldKind::replay;
  s.field.samples = profile;
  const double settle = 20.0 * s.lockin.time_constant;
  LoopOptions opts;
  opts.settle_time = settle;
  const double duration = profile.t0 + profile.duration() - settle;
  if (!(duration > 0)) throw InvalidArgument("replay: profile shorter than the settling time");
  const auto rec = closed_loop_run(s, normalized_pi(run.cfg.pi, lp.zc_slope, run.cfg.loop_gain), duration, opts);
  write_loop_csv(run.file("replay.csv"), rec);
  const auto smooth = gaussian_smooth(rec.field_estimate, p.smoothing_sigma);
  std::vector<double> applied(rec.size());
  double ss = 0.0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    applied[k] = profile.at(rec.time[k]);
    ss += (smooth[k] - applied[k]) * (smooth[k] - applied[k]);
  }
  csv::write_columns(run.file("replay_smoothed.csv"), {"t_s", "field_T", "applied_T"}, {&rec.time, &smooth, &applied});
  run.metric("locked", rec.locked ? 1.0 : 0.0);
  run.metric("rms_deviation_t", rec.size() ? std::sqrt(ss / static_cast<double>(rec.size())) : 0.0);
  run.metric("profile_peak_t", *std::max_element(profile.values.begin(), profile.values.end()));
}

void run_calibrate(Run& run) {
  const auto& p = run.cfg.calibrate;
  SensorSetup s = run.cfg.sensor;
  s.field.axis_index = p.axis;
  const double f0 = line_frequency(s, p.axis, -1);
  const SweepPlan plan = run.cfg.sweep.value_or(window_around(f0, p.half_width, p.n_points, p.dwell));
  const auto r = calibrate_coil(s, p.coil_constant, p.currents, plan);
  std::vector<double> shifts(r.centers.size());
  for (std::size_t k = 0; k < shifts.size(); ++k) shifts[k] = r.centers[k] - f0;
  csv::write_columns(run.file("calibration.csv"), {"current_a", "center_hz", "shift_hz"},
                     {&r.currents, &r.centers, &shifts});
  run.metric("slope_hz_per_a", r.slope_hz_per_a);
  run.metric("slope_stderr_hz_per_a", r.slope_stderr);
  run.metric("slope_t_per_a", r.slope_t_per_a);
}

}  // namespace

RunSummary run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  Run run{cfg, out_dir, {}};
  run.summary.warnings = cfg.sensor.lockin.check(cfg.sensor.input_rate());
  switch (cfg.kind) {
    case ScenarioKind::odmr: run_odmr(run); break;
    case ScenarioKind::track: run_track(run); break;
    case ScenarioKind::dynrange: run_dynrange(run); break;
    case ScenarioKind::allan: run_allan(run); break;
    case ScenarioKind::psd: run_psd(run); break;
    case ScenarioKind::replay: run_replay(run); break;
    case ScenarioKind::calibrate: run_calibrate(run); break;
  }

  json manifest;
  manifest["scenario"] = scenario_name(cfg.kind);
  manifest["version"] = version();
  manifest["seed"] = cfg.seed;
  manifest["timestamp"] = utc_timestamp();
  manifest["config"] = json::parse(cfg.echo);
  json files = json::array();
  for (const auto& f : run.summary.files) files.push_back(f.filename().string());
  manifest["outputs"] = files;
  json metrics = json::object();
  for (const auto& [k, v] : run.summary.metrics) metrics[k] = std::isfinite(v) ? json(v) : json(nullptr);
  manifest["metrics"] = metrics;
  manifest["warnings"] = run.summary.warnings;
  const auto path = out_dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  run.summary.files.push_back(path);
  return run.summary;
}

}  // namespace qmagpi
