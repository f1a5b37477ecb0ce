// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "qmagpi/analysis.hpp"
#include "qmagpi/scenario.hpp"

using namespace qmagpi;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail, double seconds) {
  std::printf("%s %2d %-34s %s [%.1f s]\n", ok ? "PASS" : "FAIL", id, name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++failures;
}

struct Outcome {
  bool ok = false;
  std::string detail;
};

void criterion(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  report(id, name, o.ok, o.detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * std::abs(target); }

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Reference sensor locked to the tracking line with the default gain signs.
LockPoint lock_tracking(SensorSetup& s) {
  return acquire_lock_point(s, window_around(line_frequency(s, s.field.axis_index, +1), 7.5e6, 151, 0.1), -1.0);
}

double mean_between(const LoopRecord& rec, const std::vector<double>& v, double a, double b) {
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec.time[k] >= a && rec.time[k] < b) {
      acc += v[k];
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

int main() {
  criterion(1, "shot-noise limit", [] {
    const double eta = shot_noise_sensitivity(28.024e9, 1.0e6, 0.0015, 7.5e14);
    return Outcome{within(eta, 0.7e-9, 0.05), fmt("eta=%.3f nT/rtHz (0.7 +-5%%)", eta * 1e9)};
  });

  DynamicRangeResult dr;
  criterion(2, "open-loop dynamic range", [&] {
    SensorSetup s = reference_sensor();
    const auto lp = lock_tracking(s);
    dr = dynamic_range_experiment(s, normalized_pi(PiConfig{}, lp.zc_slope, 0.3), lp.zc_slope, DynamicRangePlan{});
    return Outcome{within(dr.range_open, 3.57e-6, 0.30), fmt("range_open=%.2f uT (3.57 +-30%%)", dr.range_open * 1e6)};
  });
  criterion(3, "closed-loop dynamic range", [&] {
    const double ratio = dr.range_open > 0 ? dr.range_closed / dr.range_open : 0.0;
    return Outcome{within(dr.range_closed, 178e-6, 0.15) && ratio >= 15.0,
                   fmt("range_closed=%.1f uT (178 +-15%%), ratio=%.1f (>=15)", dr.range_closed * 1e6, ratio)};
  });

  criterion(4, "ODMR triplet fit", [] {
    SensorSetup s = reference_sensor();
    const auto lp = acquire_lock_point(s, SweepPlan{}, -1.0);
    return Outcome{within(lp.fit.gamma, 1.0e6, 0.05) && within(lp.fit.hf_split, s.nv.hyperfine_split, 0.02),
                   fmt("gamma=%.4f MHz (1 +-5%%), hf=%.4f MHz (%.3f +-2%%)", lp.fit.gamma * 1e-6,
                       lp.fit.hf_split * 1e-6, s.nv.hyperfine_split * 1e-6)};
  });

  criterion(5, "square-wave tracking", [] {
    SensorSetup s = reference_sensor();
    s.lockin.time_constant = 25e-3;
    const auto lp = lock_tracking(s);
    const TrackPlan plan;
    const auto r = square_wave_tracking(s, lp.zc_slope, plan);
    const double consistency = r.sigma_single / r.sigma_predicted;
    return Outcome{within(r.amplitude, plan.amplitude, 0.10) && within(consistency, 1.0, 0.05),
                   fmt("amplitude=%.1f nT (50 +-10%%), sigma fit/predicted=%.3f (1 +-5%%), sigma=%.0f nT",
                       r.amplitude * 1e9, consistency, r.sigma_single * 1e9)};
  });

  criterion(6, "cross-method sensitivity", [] {
    SensorSetup s = reference_sensor();
    const auto lp = lock_tracking(s);
    const auto iq = record_lockin(s.with_seed(derive_seed(s.noise.seed, 600)), 20.0, 20 * s.lockin.time_constant);
    const double sigma = std::sqrt(variance(iq.i_phase.values));
    const double eta_formula = sensitivity_esr(sigma, s.lockin.time_constant, lp.fit.max_slope, s.nv.gamma_e).eta;
    const double eta_psd = noise_spectrum(s.with_seed(derive_seed(s.noise.seed, 601)), lp.zc_slope, PsdPlan{}).floor;
    TrackPlan tp;
    tp.traces = 20;
    const double eta_square = square_wave_tracking(s.with_seed(derive_seed(s.noise.seed, 602)), lp.zc_slope, tp).sensitivity;
    const double hi = std::max({eta_formula, eta_psd, eta_square});
    const double lo = std::min({eta_formula, eta_psd, eta_square});
    return Outcome{hi / lo <= 2.0, fmt("formula=%.1f psd=%.1f square=%.1f nT/rtHz, max/min=%.2f (<=2)",
                                       eta_formula * 1e9, eta_psd * 1e9, eta_square * 1e9, hi / lo)};
  });

  criterion(7, "Allan estimator", [] {
    TimeSeries hand;
    hand.dt = 0.5;
    hand.values = {0.3, -1.2, 2.5, 0.7, 0.1, -0.4, 1.9, -2.2, 0.05, 0.8, -0.6, 1.1};
    const auto r = overlapping_allan(hand, {0.5, 1.0});
    double worst = 0;
    for (std::size_t m = 1; m <= 2; ++m) {
      double acc = 0;
      std::size_t terms = 0;
      for (std::size_t j = 0; j + 2 * m <= hand.size(); ++j) {
        double a = 0, b = 0;
        for (std::size_t k = 0; k < m; ++k) {
          a += hand.values[j + k];
          b += hand.values[j + m + k];
        }
        acc += std::pow((b - a) / static_cast<double>(m), 2);
        ++terms;
      }
      const double oracle = std::sqrt(acc / (2.0 * static_cast<double>(terms)));
      worst = std::max(worst, std::abs(r.adev[m - 1] - oracle) / oracle);
    }

    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    TimeSeries white;
    white.dt = 1e-2;
    for (int k = 0; k < 200000; ++k) white.values.push_back(g(rng));
    const auto w = overlapping_allan(white, {0.1, 0.2, 0.5, 1.0});
    const double slope = loglog_slope(w.taus, w.adev, 0.1, 1.0);

    TimeSeries drift;
    drift.dt = 0.1;
    const double c = 3e-3;
    for (int k = 0; k < 3000; ++k) drift.values.push_back(c * k * drift.dt);
    const auto d = overlapping_allan(drift, {1.0, 10.0, 50.0});
    double drift_err = 0;
    for (std::size_t i = 0; i < d.taus.size(); ++i) {
      drift_err = std::max(drift_err, std::abs(d.adev[i] / (c * d.taus[i] / std::sqrt(2.0)) - 1.0));
    }
    return Outcome{worst <= 1e-12 && within(slope, -0.5, 0.05) && drift_err <= 0.02,
                   fmt("oracle rel=%.1e (<=1e-12), white slope=%.3f (-0.5 +-5%%), drift err=%.2e (<=2%%)", worst,
                       slope, drift_err)};
  });

  criterion(8, "drift transfer under lock", [] {
    SensorSetup s = reference_sensor();
    const auto lp = lock_tracking(s);
    const double duration = 200.0, ramp = 1.0 / duration;  // 1 K over the run
    TimeSeries temp;
    temp.dt = 0.1;
    temp.unit = "K";
    for (int k = 0; k <= 2100; ++k) temp.values.push_back(ramp * k * temp.dt);
    s.noise.temperature = temp;
    LoopOptions opts;
    opts.settle_time = 0.2;
    const auto rec = closed_loop_run(s, normalized_pi(PiConfig{}, lp.zc_slope, 0.3), duration, opts);
    // After the slow integral pole (about 20 s) has settled.
    const double a = 62.5, b = 197.5;
    const double absorbed =
        (mean_between(rec, rec.pi_output, b - 2.5, b + 2.5) - mean_between(rec, rec.pi_output, a - 2.5, a + 2.5)) /
        (ramp * (b - a));
    TimeSeries err;
    err.dt = rec.time[1] - rec.time[0];
    for (std::size_t k = 0; k < rec.size(); ++k) {
      if (rec.time[k] >= a) err.values.push_back(rec.error[k]);
    }
    const auto adev = overlapping_allan(err, allan_tau_grid(err, 10));
    const double slope = loglog_slope(adev.taus, adev.adev, 0.1, 1.0);
    return Outcome{rec.locked && within(absorbed, s.nv.temp_coefficient, 0.05) && within(slope, -0.5, 0.05),
                   fmt("locked=%d, PI absorbs %.1f kHz/K (%.0f +-5%%), error ADEV slope=%.3f (-0.5 +-5%%)",
                       rec.locked ? 1 : 0, absorbed * 1e-3, s.nv.temp_coefficient * 1e-3, slope)};
  });

  criterion(9, "Parseval", [] {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<PsdResult> spectra;
    double var = 0;
    const int traces = 50;
    for (int t = 0; t < traces; ++t) {
      TimeSeries ts;
      ts.dt = 1.0 / 1923.0;
      for (int k = 0; k < 19230; ++k) ts.values.push_back(g(rng));
      var += variance(ts.values) / traces;
      spectra.push_back(psd(ts, 1));
    }
    const auto avg = average_psd(spectra);
    double total = 0;
    for (double p : avg.psd_v) total += p * avg.df;
    return Outcome{within(total, var, 0.01), fmt("sum psd df=%.5f vs variance=%.5f (+-1%%)", total, var)};
  });

  criterion(10, "coil calibration", [] {
    SensorSetup s = reference_sensor();
    const CalibratePlan p;
    s.field.axis_index = p.axis;
    const auto plan = window_around(line_frequency(s, p.axis, -1), p.half_width, p.n_points, p.dwell);
    const auto r = calibrate_coil(s, 4.889e-6, p.currents, plan);
    return Outcome{within(r.slope_hz_per_a, 137e3, 0.01), fmt("slope=%.2f kHz/A (137 +-1%%)", r.slope_hz_per_a * 1e-3)};
  });

  std::printf("%d of 10 criteria failed\n", failures);
  return failures;
}
