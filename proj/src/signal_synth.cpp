#include "qmagpi/signal_synth.hpp"

#include <cmath>
#include <numbers>

#include "qmagpi/csv.hpp"
#include "qmagpi/error.hpp"

namespace qmagpi {

void FmDriveConfig::validate() const {
  if (!(mod_rate > 0) || !std::isfinite(mod_rate)) throw InvalidArgument("FmDriveConfig: fm must be > 0");
  if (!(deviation >= 0) || !std::isfinite(deviation)) throw InvalidArgument("FmDriveConfig: fdev must be >= 0");
  if (!(carrier > 0) || !std::isfinite(carrier)) throw InvalidArgument("FmDriveConfig: fc must be > 0");
  if (!(deviation < carrier)) throw InvalidArgument("FmDriveConfig: fdev must be below fc");
}

double modulation_angle(double f, double t) {
  const double cycles = f * t;
  return 2.0 * std::numbers::pi * (cycles - std::floor(cycles));
}

double fm_instantaneous_frequency(const FmDriveConfig& drive, double t) {
  return drive.carrier + drive.deviation * std::sin(modulation_angle(drive.mod_rate, t));
}

double FieldProfile::value_at(double t) const {
  switch (kind) {
    case FieldKind::constant:
      return amplitude;
    case FieldKind::square: {
      const double cycles = frequency * t;
      return (cycles - std::floor(cycles)) < 0.5 ? amplitude : -amplitude;
    }
    case FieldKind::ramp:
      return amplitude + rate * t;
    case FieldKind::replay:
      return samples.at(t);
  }
  return 0.0;
}

void FieldProfile::validate() const {
  bias.validate();
  if (axis_index < 0 || axis_index > 3) throw InvalidArgument("FieldProfile: axis_index must be 0..3");
  if (!std::isfinite(amplitude) || !std::isfinite(rate) || !std::isfinite(frequency)) {
    throw InvalidArgument("FieldProfile: non-finite amplitude/rate/frequency");
  }
  if (kind == FieldKind::square && !(frequency > 0)) throw InvalidArgument("FieldProfile: square needs frequency > 0");
  if (kind == FieldKind::replay) {
    if (samples.empty()) throw InvalidArgument("FieldProfile: replay needs samples");
    samples.validate();
  }
}

void NoiseConfig::validate() const {
  if (!(electronic_psd >= 0) || !std::isfinite(electronic_psd)) {
    throw InvalidArgument("NoiseConfig: electronic_psd must be >= 0");
  }
  if (!(drift_rw >= 0) || !std::isfinite(drift_rw)) throw InvalidArgument("NoiseConfig: drift_rw must be >= 0");
  if (temperature) {
    if (temperature->empty()) throw InvalidArgument("NoiseConfig: empty temperature profile");
    temperature->validate();
  }
}

void DetectorConfig::validate() const {
  if (!(responsivity_gain > 0) || !std::isfinite(responsivity_gain)) {
    throw InvalidArgument("DetectorConfig: responsivity_gain must be > 0");
  }
  if (!(sample_rate >= 0) || !std::isfinite(sample_rate)) throw InvalidArgument("DetectorConfig: bad sample_rate");
}

Synthesizer::Synthesizer(const NvEnsembleParams& params, const FmDriveConfig& drive, const FieldProfile& field,
                         const NoiseConfig& noise, const DetectorConfig& detector)
    : params_(params), drive_(drive), field_(field), noise_(noise), detector_(detector), rng_(noise.seed) {
  params_.validate();
  drive_.validate();
  field_.validate();
  noise_.validate();
  detector_.validate();
  const double fs = detector_.effective_sample_rate(drive_);
  if (!(drive_.mod_rate < 0.5 * fs)) throw InvalidArgument("Synthesizer: fm must be below half the sample rate");
  dt_ = 1.0 / fs;
  electronic_sigma_ = std::sqrt(noise_.electronic_psd * fs / 2.0);
  const Vec3& along = params_.axes[field_.axis_index];
  for (int k = 0; k < 4; ++k) {
    bias_projection_[k] = dot(field_.bias.vector, params_.axes[k]);
    profile_projection_[k] = dot(along, params_.axes[k]);
  }
}

double Synthesizer::fluorescence(double t, double f_mw) const {
  const double p = field_.value_at(t);
  double shift = drift_hz_;
  if (noise_.temperature) shift += params_.temp_coefficient * noise_.temperature->at(t);
  const double base = params_.zero_field_splitting + shift;
  const double hw2 = 0.25 * params_.linewidth * params_.linewidth;
  double dip = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double zeeman = params_.gamma_e * std::abs(bias_projection_[k] + p * profile_projection_[k]);
    for (int branch : {+1, -1}) {
      const double center = base + branch * zeeman;
      for (int hf = -1; hf <= 1; ++hf) {
        const double x = f_mw - center - hf * params_.hyperfine_split;
        dip += hw2 / (x * x + hw2);
      }
    }
  }
  const double pl = 1.0 - params_.contrast * dip;
  if (!(pl > 0)) throw InvalidArgument("Synthesizer: overlapping dips exceed unit fluorescence");
  return pl;
}

double Synthesizer::noiseless_voltage(double t) const {
  if (!detector_.laser_on) return 0.0;
  const double f_mw = fm_instantaneous_frequency(drive_, t) + carrier_offset_;
  return detector_.responsivity_gain * params_.photon_rate * fluorescence(t, f_mw);
}

double Synthesizer::next() {
  const double t = time();
  double counts = 0.0;
  if (detector_.laser_on) {
    const double f_mw = fm_instantaneous_frequency(drive_, t) + carrier_offset_;
    const double lambda = params_.photon_rate * fluorescence(t, f_mw) * dt_;
    counts = lambda;
    if (noise_.shot_noise) {
      if (lambda > 1000.0) {
        counts = lambda + std::sqrt(lambda) * normal_(rng_);
      } else {
        std::poisson_distribution<long long> poisson(lambda);
        counts = static_cast<double>(poisson(rng_));
      }
    }
  }
  double v = detector_.responsivity_gain * counts / dt_;
  if (electronic_sigma_ > 0) v += electronic_sigma_ * normal_(rng_);
  if (noise_.drift_rw > 0) drift_hz_ += noise_.drift_rw * std::sqrt(dt_) * normal_(rng_);
  ++index_;
  return v;
}

TimeSeries synthesize(const NvEnsembleParams& params, const FmDriveConfig& drive, const FieldProfile& field,
                      const NoiseConfig& noise, const DetectorConfig& detector, double duration) {
  if (!(duration > 0) || !std::isfinite(duration)) throw InvalidArgument("synthesize: duration must be > 0");
  const double fs = detector.effective_sample_rate(drive);
  if (duration * fs > kMaxSynthSamples) throw ResourceLimit("synthesize: more than 1e9 samples requested");
  Synthesizer synth(params, drive, field, noise, detector);
  TimeSeries out;
  out.t0 = 0.0;
  out.dt = synth.sample_period();
  out.unit = "V";
  const auto n = static_cast<std::size_t>(std::llround(duration * fs));
  out.values.resize(n);
  for (auto& v : out.values) v = synth.next();
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TimeSeries read_field_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path, {"t_s", "field_T"});
  const auto& t = table.columns[0];
  if (t.size() < 2) throw InvalidArgument("replay csv: need at least two rows");
  TimeSeries ts;
  ts.t0 = t[0];
  ts.dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  ts.unit = "T";
  if (!(ts.dt > 0)) throw InvalidArgument("replay csv: time column must increase");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (std::abs((t[i] - t[i - 1]) - ts.dt) > 1e-6 * ts.dt) {
      throw InvalidArgument("replay csv: rows are not uniformly spaced (row " + std::to_string(i + 1) + ")");
    }
  }
  ts.values = table.columns[1];
  ts.validate();
  return ts;
}

void write_field_csv(const std::filesystem::path& path, const TimeSeries& field) {
  std::vector<double> t(field.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = field.time(i);
  csv::write_columns(path, {"t_s", "field_T"}, {&t, &field.values});
}

}  // namespace qmagpi
