#include "qmagpi/sensor.hpp"

#include <cmath>

#include "qmagpi/error.hpp"

namespace qmagpi {

void SensorSetup::validate() const {
  nv.validate();
  drive.validate();
  field.validate();
  noise.validate();
  detector.validate();
  lockin.check(input_rate());
  if (std::abs(lockin.mod_rate - drive.mod_rate) > 1e-9 * drive.mod_rate) {
    throw InvalidArgument("SensorSetup: lock-in reference must equal the FM rate");
  }
}

SensorSetup SensorSetup::noiseless() const {
  SensorSetup s = *this;
  s.noise.shot_noise = false;
  s.noise.electronic_psd = 0.0;
  s.noise.drift_rw = 0.0;
  return s;
}

QuadratureSeries record_lockin(const SensorSetup& sensor, double duration, double settle) {
  sensor.validate();
  if (!(duration > 0) || !(settle >= 0)) throw InvalidArgument("record_lockin: bad duration");
  if ((duration + settle) * sensor.input_rate() > kMaxSynthSamples) {
    throw ResourceLimit("record_lockin: more than 1e9 samples requested");
  }
  Synthesizer synth(sensor.nv, sensor.drive, sensor.field, sensor.noise, sensor.detector);
  Lockin lockin(sensor.lockin, synth.sample_period());
  QuadratureSeries out;
  out.i_phase.dt = lockin.output_period();
  out.i_phase.unit = "V";
  out.quadrature = out.i_phase;
  const auto total = static_cast<std::uint64_t>(std::llround((duration + settle) * sensor.input_rate()));
  bool first = true;
  for (std::uint64_t n = 0; n < total; ++n) {
    const double t = synth.time();
    auto s = lockin.push(synth.next());
    if (s && t >= settle) {
      if (first) {
        out.i_phase.t0 = out.quadrature.t0 = s->t;
        first = false;
      }
      out.i_phase.values.push_back(s->i);
      out.quadrature.values.push_back(s->q);
    }
  }
  return out;
}

SettledReading settled_reading(const SensorSetup& sensor, double dwell, double discard) {
  if (!(dwell > discard)) throw InvalidArgument("settled_reading: dwell must exceed the discard window");
  const auto iq = record_lockin(sensor, dwell - discard, discard);
  if (iq.i_phase.empty()) throw InvalidArgument("settled_reading: no output samples after settling");
  return {mean(iq.i_phase.values), mean(iq.quadrature.values)};
}

double predicted_i_sigma(const SensorSetup& sensor) {
  sensor.validate();
  double psd = sensor.noise.electronic_psd;
  if (sensor.noise.shot_noise && sensor.detector.laser_on) {
    const Synthesizer synth(sensor.nv, sensor.drive, sensor.field, sensor.noise, sensor.detector);
    const std::size_t n = 256;
    double v = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      v += synth.noiseless_voltage(static_cast<double>(k) / (static_cast<double>(n) * sensor.drive.mod_rate));
    }
    // One-sided shot-noise density of g * counts / dt is 2 g V.
    psd += 2.0 * sensor.detector.responsivity_gain * v / static_cast<double>(n);
  }
  return output_noise_sigma(sensor.lockin, sensor.input_rate(), psd);
}

double calibrate_phase(const SensorSetup& sensor, double duration) {
  sensor.validate();
  const auto raw = synthesize(sensor.nv, sensor.drive, sensor.field, sensor.noise, sensor.detector, duration);
  return auto_phase(high_pass(raw, sensor.lockin.hp_cutoff), sensor.lockin);
}

}  // namespace qmagpi
