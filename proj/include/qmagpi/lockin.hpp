#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "qmagpi/time_series.hpp"

namespace qmagpi {

struct LockinConfig {
  double mod_rate = 1e3;         // reference frequency fm, Hz
  double phase = 0.0;            // demodulation phase, rad
  double time_constant = 10e-3;  // tau, s
  double hp_cutoff = 700.0;      // input high-pass corner, Hz
  double out_rate = 1900.0;      // requested output rate, Hz

  /// Throws InvalidArgument on hard violations for the given input rate and
  /// returns soft warnings (e.g. output rate above 1/(2 tau)).
  std::vector<std::string> check(double input_rate) const;
  /// Pick-every-Nth factor: round(input_rate / out_rate), at least 1.
  std::size_t decimation(double input_rate) const;
};

/// Demodulated in-phase and quadrature outputs on a shared time grid.
struct QuadratureSeries {
  TimeSeries i_phase;
  TimeSeries quadrature;
};

/// First-order high-pass, bilinear transform prewarped so the -3 dB corner
/// sits exactly at `cutoff`. The state primes on the first sample, so a
/// constant input yields zero output.
class HighPassFilter {
 public:
  HighPassFilter(double cutoff, double dt);
  double process(double x);
  double gain(double f) const;
  void reset() { primed_ = false; }

 private:
  double b_;
  double a_;
  double dt_;
  double x_prev_ = 0.0;
  double y_prev_ = 0.0;
  bool primed_ = false;
};

/// Single-pole exponential moving average with time constant tau.
class LowPassFilter {
 public:
  LowPassFilter(double tau, double dt);
  double process(double x) {
    y_ += alpha_ * (x - y_);
    return y_;
  }
  double value() const { return y_; }
  void reset(double y = 0.0) { y_ = y; }
  double alpha() const { return alpha_; }
  /// |H(f)|^2 of the discrete filter.
  double power_response(double f) const;
  /// One-sided equivalent noise bandwidth, Hz; tends to 1/(4 tau).
  double enbw() const;

 private:
  double alpha_;
  double dt_;
  double y_ = 0.0;
};

struct QuadratureSample {
  double t;
  double i;
  double q;
};

/// Streaming dual-phase lock-in: optional input high-pass, mixing against
/// sin/cos(2 pi fm t + phase), two single-pole low-passes, decimation.
class Lockin {
 public:
  Lockin(const LockinConfig& cfg, double input_dt, double t0 = 0.0, bool input_high_pass = true);

  std::optional<QuadratureSample> push(double x);
  void set_phase(double phase) { cfg_.phase = phase; }
  double output_period() const { return input_dt_ * static_cast<double>(decimation_); }
  std::size_t decimation() const { return decimation_; }
  const LockinConfig& config() const { return cfg_; }

 private:
  LockinConfig cfg_;
  double input_dt_;
  double t0_;
  std::size_t decimation_;
  std::optional<HighPassFilter> high_pass_;
  LowPassFilter lp_i_;
  LowPassFilter lp_q_;
  std::size_t n_ = 0;
};

TimeSeries high_pass(const TimeSeries& ts, double cutoff);

/// Mixing, low-pass and decimation only (no input high-pass):
/// I = LP[2 x sin(2 pi fm t + phase)], Q = LP[2 x cos(2 pi fm t + phase)].
QuadratureSeries demodulate(const TimeSeries& ts, const LockinConfig& cfg);

/// The full chain: high_pass at cfg.hp_cutoff followed by demodulate.
QuadratureSeries lockin_process(const TimeSeries& ts, const LockinConfig& cfg);

/// Standard deviation of I (or Q) for stationary white input noise of
/// one-sided density `psd` (V^2/Hz) through the full chain, by numerical
/// integration of the high-pass, mixing and low-pass responses.
double output_noise_sigma(const LockinConfig& cfg, double input_rate, double psd);

/// Demodulation phase that puts the signal in I (maximal I RMS), in
/// (-pi/2, pi/2]. Output samples within `settle_tau` time constants of the
/// start are ignored. Throws NoPhaseFound when there is no signal at fm.
double auto_phase(const TimeSeries& ts, const LockinConfig& cfg, double settle_tau = 5.0);

}  // namespace qmagpi
