#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "qmagpi/error.hpp"
#include "qmagpi/scenario.hpp"
#include "qmagpi/signal_synth.hpp"

using namespace qmagpi;

namespace {

struct Rig {
  NvEnsembleParams nv;
  FmDriveConfig drive;
  FieldProfile field;
  NoiseConfig noise;
  DetectorConfig detector;

  TimeSeries run(double duration) const { return synthesize(nv, drive, field, noise, detector, duration); }
};

Rig detuned_rig() {
  Rig r;
  r.drive.carrier = 2.0e9;  // far from every line
  return r;
}

double sample_variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("qmagpi_synth_" + name);
}

}  // namespace

TEST_CASE("fm law") {
  FmDriveConfig d;
  d.carrier = 2.852e9;
  d.deviation = 400e3;
  d.mod_rate = 1e3;
  CHECK(fm_instantaneous_frequency(d, 0.0) == d.carrier);
  CHECK(fm_instantaneous_frequency(d, 0.25e-3) == doctest::Approx(2.8524e9).epsilon(1e-15));
  CHECK(fm_instantaneous_frequency(d, 0.75e-3) == doctest::Approx(2.8516e9).epsilon(1e-15));
  for (double t : {1.3e-4, 7.77e-3, 123.456}) {
    const double normalized = (fm_instantaneous_frequency(d, t) - d.carrier) / d.deviation;
    CHECK(std::abs(normalized - std::sin(2 * std::numbers::pi * d.mod_rate * t)) < 1e-9);
  }
}

TEST_CASE("drive validation") {
  FmDriveConfig d;
  d.mod_rate = 0;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d = FmDriveConfig{};
  d.deviation = -1;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d = FmDriveConfig{};
  d.deviation = 3e9;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d = FmDriveConfig{};
  d.carrier = 0;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
}

TEST_CASE("field profiles") {
  FieldProfile f;
  f.kind = FieldKind::square;
  f.amplitude = 2.0;
  f.frequency = 2.0;
  CHECK(f.value_at(0.0) == 2.0);
  CHECK(f.value_at(0.24) == 2.0);
  CHECK(f.value_at(0.26) == -2.0);
  CHECK(f.value_at(0.51) == 2.0);
  f.kind = FieldKind::ramp;
  f.rate = 0.5;
  CHECK(f.value_at(4.0) == doctest::Approx(4.0));
  f.kind = FieldKind::replay;
  f.samples.dt = 0.5;
  f.samples.values = {0.0, 1.0, 3.0};
  CHECK(f.value_at(0.25) == doctest::Approx(0.5));
  CHECK(f.value_at(0.75) == doctest::Approx(2.0));
  CHECK(f.value_at(10.0) == 3.0);
  CHECK(f.value_at(-1.0) == 0.0);
  f.samples.values.clear();
  CHECK_THROWS_AS(f.validate(), InvalidArgument);
  FieldProfile bad;
  bad.axis_index = 4;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("noiseless detuned output is the plateau gain * R * PL") {
  const Rig r = detuned_rig();
  const auto ts = r.run(0.01);
  const auto lines = resonance_frequencies(r.nv, r.field.bias);
  const double plateau = r.detector.responsivity_gain * r.nv.photon_rate;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double pl = odmr_fluorescence(r.nv, lines, fm_instantaneous_frequency(r.drive, ts.time(i)));
    CHECK(ts.values[i] == doctest::Approx(plateau * pl).epsilon(1e-12));
    CHECK(std::abs(ts.values[i] - plateau) < plateau * 1e-5);
  }
  CHECK(ts.dt == doctest::Approx(1.0 / 50e3));
  CHECK(ts.unit == "V");
}

TEST_CASE("shot noise follows Poisson statistics") {
  SUBCASE("Gaussian regime, lambda = 7.5e9") {
    Rig r = detuned_rig();
    r.noise.shot_noise = true;
    r.noise.seed = 11;
    r.drive.deviation = 0;
    r.detector.sample_rate = 1e5;
    const auto ts = r.run(1.0);
    REQUIRE(ts.size() == 100000);
    const double lambda = r.nv.photon_rate * odmr_fluorescence(r.nv, resonance_frequencies(r.nv, {}), 2.0e9) * ts.dt;
    std::vector<double> counts(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) counts[i] = ts.values[i] * ts.dt / r.detector.responsivity_gain;
    CHECK(sample_variance(counts) == doctest::Approx(lambda).epsilon(0.05));
  }
  SUBCASE("exact Poisson regime, lambda = 5") {
    Rig r = detuned_rig();
    r.noise.shot_noise = true;
    r.noise.seed = 12;
    r.nv.photon_rate = 5e5;
    r.drive.deviation = 0;
    r.detector.sample_rate = 1e5;
    const auto ts = r.run(1.0);
    std::vector<double> counts(ts.size());
    bool integral = true;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      counts[i] = ts.values[i] * ts.dt / r.detector.responsivity_gain;
      integral = integral && std::abs(counts[i] - std::round(counts[i])) < 1e-6;
    }
    CHECK(integral);
    const double lambda = 5.0 * odmr_fluorescence(r.nv, resonance_frequencies(r.nv, {}), 2.0e9);
    CHECK(mean(counts) == doctest::Approx(lambda).epsilon(0.02));
    CHECK(sample_variance(counts) == doctest::Approx(lambda).epsilon(0.05));
  }
}

TEST_CASE("mean output on resonance matches gain * R * mean(PL)") {
  Rig r;
  r.noise.shot_noise = true;
  r.noise.seed = 5;
  r.drive.carrier = r.nv.zero_field_splitting + 0.3e6;
  const auto ts = r.run(2.0);
  const auto lines = resonance_frequencies(r.nv, r.field.bias);
  double pl = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) pl += odmr_fluorescence(r.nv, lines, fm_instantaneous_frequency(r.drive, ts.time(i)));
  pl /= static_cast<double>(ts.size());
  const double expected = r.detector.responsivity_gain * r.nv.photon_rate * pl;
  const double lambda = r.nv.photon_rate * ts.dt;
  const double stderr_v = r.detector.responsivity_gain * std::sqrt(lambda) / ts.dt / std::sqrt(static_cast<double>(ts.size()));
  CHECK(std::abs(mean(ts.values) - expected) < 3.0 * stderr_v);
}

TEST_CASE("reproducibility and seed independence") {
  Rig r = detuned_rig();
  const auto a = r.run(0.5);
  r.noise.seed = 999;
  const auto b = r.run(0.5);
  CHECK(a.values == b.values);

  r.noise.shot_noise = true;
  r.noise.electronic_psd = 1e-10;
  r.noise.seed = 1;
  const auto c = r.run(2.0);
  const auto d = r.run(2.0);
  CHECK(c.values == d.values);
  r.noise.seed = 2;
  const auto e = r.run(2.0);
  REQUIRE(e.size() >= 100000);
  CHECK(std::abs(correlation(c.values, e.values)) < 0.01);
}

TEST_CASE("electronic noise has the configured one-sided density") {
  Rig r = detuned_rig();
  r.detector.laser_on = false;
  r.noise.electronic_psd = 4e-12;
  r.noise.seed = 3;
  const auto ts = r.run(4.0);
  // one-sided density S over bandwidth fs/2 gives variance S fs / 2
  CHECK(sample_variance(ts.values) == doctest::Approx(4e-12 * 50e3 / 2).epsilon(0.02));
  CHECK(std::abs(mean(ts.values)) < 5.0 * std::sqrt(4e-12 * 25e3 / static_cast<double>(ts.size())));
}

TEST_CASE("resonance random walk spreads as drift_rw * sqrt(T)") {
  // With fdev = 0 and the carrier on the linear flank of an isolated line,
  // the final voltage maps back to the accumulated resonance shift.
  Rig r;
  r.drive.deviation = 0;
  r.drive.carrier = r.nv.zero_field_splitting + r.nv.hyperfine_split + r.nv.linewidth / (2.0 * std::sqrt(3.0));
  r.noise.drift_rw = 2000.0;  // Hz/sqrt(s)
  const double duration = 0.2;
  const auto lines = resonance_frequencies(r.nv, r.field.bias);
  const double g = r.detector.responsivity_gain * r.nv.photon_rate;
  const double h = 10.0;
  const double dv_df = g * (odmr_fluorescence(r.nv, lines, r.drive.carrier + h) -
                            odmr_fluorescence(r.nv, lines, r.drive.carrier - h)) / (2 * h);
  const double v0 = g * odmr_fluorescence(r.nv, lines, r.drive.carrier);
  std::vector<double> shifts;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    r.noise.seed = seed;
    const auto ts = r.run(duration);
    // a resonance shift +df moves PL as a carrier shift -df would
    shifts.push_back(-(ts.values.back() - v0) / dv_df);
  }
  const double n_steps = duration * 50e3 - 1.0;
  const double expected = 2000.0 * 2000.0 * n_steps / 50e3;
  CHECK(sample_variance(shifts) == doctest::Approx(expected).epsilon(0.25));
}

TEST_CASE("temperature profile shifts the resonance") {
  Rig r;
  r.drive.deviation = 0;
  r.drive.carrier = r.nv.zero_field_splitting + 0.4e6;
  TimeSeries temp;
  temp.dt = 1.0;
  temp.values = {1.0, 1.0};
  r.noise.temperature = temp;
  const auto ts = r.run(1e-3);
  const auto shifted = resonance_frequencies(r.nv, r.field.bias, 1.0);
  const double expected = r.detector.responsivity_gain * r.nv.photon_rate * odmr_fluorescence(r.nv, shifted, r.drive.carrier);
  CHECK(ts.values.front() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("square field toggles the demodulated output by gamma_e * 2A") {
  SensorSetup s = reference_sensor().noiseless();
  s.drive.carrier = line_frequency(s, s.field.axis_index, +1);
  s.lockin.phase = calibrate_phase(s.with_carrier(s.drive.carrier + 0.3e6), 0.5);
  const double slope = measure_discriminator_slope(s, 5e3, 0.4);
  s.field.kind = FieldKind::square;
  s.field.amplitude = 50e-9;
  s.field.frequency = 2.0;
  const auto iq = record_lockin(s, 2.0, 0.0);
  double hi = 0, lo = 0;
  int nh = 0, nl = 0;
  for (std::size_t k = 0; k < iq.i_phase.size(); ++k) {
    const double t = iq.i_phase.time(k);
    const double phase = t * 4.0 - std::floor(t * 4.0);  // position within a half period
    if (phase < 0.6) continue;
    if (s.field.value_at(t) > 0) {
      hi += iq.i_phase.values[k];
      ++nh;
    } else {
      lo += iq.i_phase.values[k];
      ++nl;
    }
  }
  const double step_hz = std::abs(hi / nh - lo / nl) / std::abs(slope);
  CHECK(step_hz == doctest::Approx(s.nv.gamma_e * 100e-9).epsilon(0.02));
}

TEST_CASE("resource guard") {
  Rig r = detuned_rig();
  CHECK_THROWS_AS(r.run(30000.0), ResourceLimit);
  CHECK_THROWS_AS(r.run(0.0), InvalidArgument);
}

TEST_CASE("derived seeds differ per index and are deterministic") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}

TEST_CASE("replay csv round trip and validation") {
  TimeSeries f;
  f.t0 = 0.5;
  f.dt = 0.01;
  f.values = {0.0, 1e-6, 2.5e-6, -3e-7};
  const auto path = temp_file("field.csv");
  write_field_csv(path, f);
  const auto back = read_field_csv(path);
  CHECK(back.t0 == doctest::Approx(0.5));
  CHECK(back.dt == doctest::Approx(0.01));
  CHECK(back.values == f.values);

  {
    std::ofstream out(path);
    out << "t_s,field_T\n0,0\n0.1,1\n0.3,2\n";
  }
  CHECK_THROWS_AS(read_field_csv(path), Error);
  {
    std::ofstream out(path);
    out << "0,0\n0.1,1\n";
  }
  CHECK_THROWS_AS(read_field_csv(path), Error);
  std::filesystem::remove(path);
}
