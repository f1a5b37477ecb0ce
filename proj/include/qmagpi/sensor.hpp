#pragma once

#include <cstdint>

#include "qmagpi/lockin.hpp"
#include "qmagpi/signal_synth.hpp"

namespace qmagpi {

/// Everything needed to simulate the sensor head and its lock-in readout.
struct SensorSetup {
  NvEnsembleParams nv;
  FmDriveConfig drive;
  FieldProfile field;
  NoiseConfig noise;
  DetectorConfig detector;
  LockinConfig lockin;

  double input_rate() const { return detector.effective_sample_rate(drive); }
  void validate() const;

  SensorSetup with_carrier(double fc) const {
    SensorSetup s = *this;
    s.drive.carrier = fc;
    return s;
  }
  SensorSetup with_seed(std::uint64_t seed) const {
    SensorSetup s = *this;
    s.noise.seed = seed;
    return s;
  }
  SensorSetup noiseless() const;
};

/// Streams synthesis through the full lock-in chain and returns the output
/// after dropping the first `settle` seconds.
QuadratureSeries record_lockin(const SensorSetup& sensor, double duration, double settle = 0.0);

struct SettledReading {
  double i = 0.0;
  double q = 0.0;
};

/// Mean lock-in output over [discard, dwell) of a fresh run.
SettledReading settled_reading(const SensorSetup& sensor, double dwell, double discard);

/// Expected standard deviation of the lock-in I output from the configured
/// white noise (electronic plus shot noise at the mean detected rate over
/// one modulation period at t = 0). Drift is not included.
double predicted_i_sigma(const SensorSetup& sensor);

/// auto_phase on a high-passed raw record of `duration` seconds.
double calibrate_phase(const SensorSetup& sensor, double duration);

}  // namespace qmagpi
