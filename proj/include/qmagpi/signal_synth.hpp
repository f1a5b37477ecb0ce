#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>

#include "qmagpi/core_model.hpp"
#include "qmagpi/time_series.hpp"

namespace qmagpi {

/// Sinusoidal FM of the microwave carrier: f = fc + fdev sin(2 pi fm t).
struct FmDriveConfig {
  double carrier = 2.87e9;    // fc, Hz
  double deviation = 100e3;   // fdev, Hz
  double mod_rate = 1e3;      // fm, Hz

  void validate() const;
};

double fm_instantaneous_frequency(const FmDriveConfig& drive, double t);

/// 2 pi * frac(f t): the modulation angle shared by synthesis and demodulation.
double modulation_angle(double f, double t);

enum class FieldKind { constant, square, ramp, replay };

/// Applied field: a static bias vector plus a scalar profile along one NV axis.
struct FieldProfile {
  FieldKind kind = FieldKind::constant;
  double amplitude = 0.0;  // T; square half-swing, ramp start value
  double frequency = 0.0;  // Hz, square only
  double rate = 0.0;       // T/s, ramp only
  TimeSeries samples;      // replay only, T
  int axis_index = 0;
  BiasField bias;

  /// Scalar field along axes[axis_index] at time t.
  double value_at(double t) const;
  void validate() const;
};

struct NoiseConfig {
  bool shot_noise = false;
  double electronic_psd = 0.0;  // one-sided, V^2/Hz
  double drift_rw = 0.0;        // resonance random walk, Hz/sqrt(s)
  std::optional<TimeSeries> temperature;  // K, excursion from nominal
  std::uint64_t seed = 0;

  void validate() const;
  bool any() const { return shot_noise || electronic_psd > 0 || drift_rw > 0; }
};

struct DetectorConfig {
  double responsivity_gain = 3.0e-15;  // V per (photon/s)
  double sample_rate = 0.0;            // Hz; 0 selects 50 x fm
  bool laser_on = true;

  double effective_sample_rate(const FmDriveConfig& drive) const {
    return sample_rate > 0 ? sample_rate : 50.0 * drive.mod_rate;
  }
  void validate() const;
};

inline constexpr double kMaxSynthSamples = 1e9;

/// Streaming photodetector model. Each call to next() advances one sample.
class Synthesizer {
 public:
  Synthesizer(const NvEnsembleParams& params, const FmDriveConfig& drive, const FieldProfile& field,
              const NoiseConfig& noise, const DetectorConfig& detector);

  double sample_period() const { return dt_; }
  /// Time of the sample the next call to next() produces.
  double time() const { return static_cast<double>(index_) * dt_; }
  std::uint64_t index() const { return index_; }

  /// Offset added to the drive carrier (the PI actuator input), Hz.
  void set_carrier_offset(double hz) { carrier_offset_ = hz; }
  double carrier_offset() const { return carrier_offset_; }

  /// Detected photon rate times gain, without noise, at time t.
  double noiseless_voltage(double t) const;

  double next();

 private:
  double fluorescence(double t, double f_mw) const;

  NvEnsembleParams params_;
  FmDriveConfig drive_;
  FieldProfile field_;
  NoiseConfig noise_;
  DetectorConfig detector_;
  double dt_;
  double electronic_sigma_;
  std::array<double, 4> bias_projection_{};
  std::array<double, 4> profile_projection_{};
  double carrier_offset_ = 0.0;
  double drift_hz_ = 0.0;
  std::uint64_t index_ = 0;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Batch synthesis of `duration` seconds; volts.
TimeSeries synthesize(const NvEnsembleParams& params, const FmDriveConfig& drive, const FieldProfile& field,
                      const NoiseConfig& noise, const DetectorConfig& detector, double duration);

/// Deterministic child seed for the index-th independent trace.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Reads a replay profile: header `t_s,field_T`, uniformly spaced rows.
TimeSeries read_field_csv(const std::filesystem::path& path);
void write_field_csv(const std::filesystem::path& path, const TimeSeries& field);

}  // namespace qmagpi
