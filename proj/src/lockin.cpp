#include "qmagpi/lockin.hpp"

#include <cmath>
#include <numbers>

#include "qmagpi/error.hpp"
#include "qmagpi/signal_synth.hpp"

namespace qmagpi {

namespace {
constexpr double kPi = std::numbers::pi;
}

std::vector<std::string> LockinConfig::check(double input_rate) const {
  if (!(time_constant > 0) || !std::isfinite(time_constant)) throw InvalidArgument("LockinConfig: tau must be > 0");
  if (!(mod_rate > 0) || !(mod_rate < 0.5 * input_rate)) {
    throw InvalidArgument("LockinConfig: fm must lie below the input Nyquist frequency");
  }
  if (!(hp_cutoff > 0) || !(hp_cutoff < mod_rate)) throw InvalidArgument("LockinConfig: need 0 < hp_cutoff < fm");
  if (!(out_rate > 0) || out_rate > input_rate) throw InvalidArgument("LockinConfig: need 0 < out_rate <= input rate");
  if (!std::isfinite(phase)) throw InvalidArgument("LockinConfig: phase must be finite");
  std::vector<std::string> warnings;
  if (out_rate > 1.0 / (2.0 * time_constant)) {
    warnings.push_back("lockin: output rate exceeds 1/(2 tau); consecutive samples are correlated");
  }
  return warnings;
}

std::size_t LockinConfig::decimation(double input_rate) const {
  const auto n = static_cast<long long>(std::llround(input_rate / out_rate));
  return static_cast<std::size_t>(n < 1 ? 1 : n);
}

HighPassFilter::HighPassFilter(double cutoff, double dt) : dt_(dt) {
  if (!(dt > 0)) throw InvalidArgument("high_pass: dt must be > 0");
  if (!(cutoff > 0) || !(cutoff < 0.5 / dt)) throw InvalidArgument("high_pass: cutoff must lie in (0, Nyquist)");
  const double k = std::tan(kPi * cutoff * dt);
  b_ = 1.0 / (1.0 + k);
  a_ = (1.0 - k) / (1.0 + k);
}

double HighPassFilter::process(double x) {
  if (!primed_) {
    x_prev_ = x;
    y_prev_ = 0.0;
    primed_ = true;
    return 0.0;
  }
  const double y = b_ * (x - x_prev_) + a_ * y_prev_;
  x_prev_ = x;
  y_prev_ = y;
  return y;
}

double HighPassFilter::gain(double f) const {
  const double w = 2.0 * kPi * f * dt_;
  // |b (1 - z^-1)| / |1 - a z^-1| on the unit circle
  const double num = b_ * b_ * (2.0 - 2.0 * std::cos(w));
  const double den = 1.0 - 2.0 * a_ * std::cos(w) + a_ * a_;
  return std::sqrt(num / den);
}

LowPassFilter::LowPassFilter(double tau, double dt) : alpha_(1.0 - std::exp(-dt / tau)), dt_(dt) {
  if (!(tau > 0) || !(dt > 0)) throw InvalidArgument("low-pass: tau and dt must be > 0");
}

double LowPassFilter::power_response(double f) const {
  const double w = 2.0 * kPi * f * dt_;
  const double r = 1.0 - alpha_;
  return alpha_ * alpha_ / (1.0 - 2.0 * r * std::cos(w) + r * r);
}

double LowPassFilter::enbw() const { return 0.5 / dt_ * alpha_ / (2.0 - alpha_); }

Lockin::Lockin(const LockinConfig& cfg, double input_dt, double t0, bool input_high_pass)
    : cfg_(cfg),
      input_dt_(input_dt),
      t0_(t0),
      decimation_(cfg.decimation(1.0 / input_dt)),
      lp_i_(cfg.time_constant, input_dt),
      lp_q_(cfg.time_constant, input_dt) {
  cfg_.check(1.0 / input_dt);
  if (input_high_pass) high_pass_.emplace(cfg.hp_cutoff, input_dt);
}

std::optional<QuadratureSample> Lockin::push(double x) {
  const double t = t0_ + static_cast<double>(n_) * input_dt_;
  if (high_pass_) x = high_pass_->process(x);
  const double theta = modulation_angle(cfg_.mod_rate, t) + cfg_.phase;
  const double i = lp_i_.process(2.0 * x * std::sin(theta));
  const double q = lp_q_.process(2.0 * x * std::cos(theta));
  ++n_;
  if (n_ % decimation_ == 0) return QuadratureSample{t, i, q};
  return std::nullopt;
}

TimeSeries high_pass(const TimeSeries& ts, double cutoff) {
  ts.validate();
  HighPassFilter hp(cutoff, ts.dt);
  TimeSeries out = ts;
  for (auto& v : out.values) v = hp.process(v);
  return out;
}

namespace {

QuadratureSeries run_lockin(const TimeSeries& ts, const LockinConfig& cfg, bool with_high_pass) {
  ts.validate();
  if (!(cfg.mod_rate < 0.5 / ts.dt)) throw InvalidArgument("demodulate: fm must lie below the input Nyquist frequency");
  Lockin lockin(cfg, ts.dt, ts.t0, with_high_pass);
  QuadratureSeries out;
  const std::size_t n = lockin.decimation();
  out.i_phase.t0 = ts.t0 + static_cast<double>(n - 1) * ts.dt;
  out.i_phase.dt = lockin.output_period();
  out.i_phase.unit = ts.unit;
  out.quadrature = out.i_phase;
  out.i_phase.values.reserve(ts.size() / n);
  out.quadrature.values.reserve(ts.size() / n);
  for (double x : ts.values) {
    if (auto s = lockin.push(x)) {
      out.i_phase.values.push_back(s->i);
      out.quadrature.values.push_back(s->q);
    }
  }
  return out;
}

}  // namespace

QuadratureSeries demodulate(const TimeSeries& ts, const LockinConfig& cfg) { return run_lockin(ts, cfg, false); }

QuadratureSeries lockin_process(const TimeSeries& ts, const LockinConfig& cfg) { return run_lockin(ts, cfg, true); }

double output_noise_sigma(const LockinConfig& cfg, double input_rate, double psd) {
  if (!(psd >= 0) || !(input_rate > 0)) throw InvalidArgument("output_noise_sigma: bad inputs");
  const double dt = 1.0 / input_rate;
  const HighPassFilter hp(cfg.hp_cutoff, dt);
  const LowPassFilter lp(cfg.time_constant, dt);
  // var = sigma^2 (2/fs) int_0^{fs/2} (|Hhp(f - fm)|^2 + |Hhp(f + fm)|^2) |Hlp(f)|^2 df, Simpson rule
  const std::size_t n = 1 << 20;
  const double h = 0.5 * input_rate / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double f = static_cast<double>(k) * h;
    const double g1 = hp.gain(f - cfg.mod_rate);
    const double g2 = hp.gain(f + cfg.mod_rate);
    const double v = (g1 * g1 + g2 * g2) * lp.power_response(f);
    acc += v * (k == 0 || k == n ? 1.0 : (k % 2 ? 4.0 : 2.0));
  }
  const double integral = acc * h / 3.0;
  const double sigma2 = psd * input_rate / 2.0;
  return std::sqrt(sigma2 * 2.0 / input_rate * integral);
}

double auto_phase(const TimeSeries& ts, const LockinConfig& cfg, double settle_tau) {
  LockinConfig zero = cfg;
  zero.phase = 0.0;
  const auto iq = demodulate(ts, zero);
  const auto skip = static_cast<std::size_t>(std::ceil(settle_tau * cfg.time_constant / iq.i_phase.dt));
  if (iq.i_phase.size() <= skip) throw InvalidArgument("auto_phase: record shorter than the settling window");

  double sii = 0.0, sqq = 0.0, siq = 0.0;
  for (std::size_t k = skip; k < iq.i_phase.size(); ++k) {
    const double i = iq.i_phase.values[k];
    const double q = iq.quadrature.values[k];
    sii += i * i;
    sqq += q * q;
    siq += i * q;
  }
  const double count = static_cast<double>(iq.i_phase.size() - skip);
  double input_ms = 0.0;
  for (double v : ts.values) input_ms += v * v;
  input_ms /= static_cast<double>(ts.size());
  const double signal_ms = (sii + sqq) / count;
  if (input_ms == 0.0 || !(signal_ms > 1e-12 * input_ms)) {
    throw NoPhaseFound("auto_phase: no signal at the reference frequency");
  }
  // I(phi) = I0 cos(phi) + Q0 sin(phi); maximize sum I(phi)^2.
  double phi = 0.5 * std::atan2(2.0 * siq, sii - sqq);
  if (phi <= -kPi / 2) phi += kPi;
  return phi;
}

}  // namespace qmagpi
