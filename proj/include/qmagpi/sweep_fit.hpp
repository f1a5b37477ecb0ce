#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qmagpi/error.hpp"
#include "qmagpi/sensor.hpp"

namespace qmagpi {

/// FM-ODMR spectrum: settled lock-in output per carrier frequency.
struct OdmrSpectrum {
  std::vector<double> freqs;  // Hz, strictly increasing
  std::vector<double> i_phase;  // V
  std::vector<double> quadrature;  // V
  double dwell = 0.0;  // s per point

  std::size_t size() const { return freqs.size(); }
  void validate() const;
};

/// Derivative-of-Lorentzian hyperfine triplet with shared width and amplitude.
struct DerivLorentzianFit {
  double center = 0.0;     // Hz
  double gamma = 1e6;      // FWHM, Hz
  double amplitude = 0.0;  // V, peak of each line's lobe
  double hf_split = 2.158e6;  // Hz
  double baseline = 0.0;   // V
  double residual_rms = 0.0;  // V
  double max_slope = 0.0;  // V/Hz, max |dV/df| of the fitted model
  double zc_slope = 0.0;   // V/Hz, dV/df at center
  int iterations = 0;
};

/// Raised when the least-squares iteration does not converge.
class FitFailed : public Error {
 public:
  FitFailed(const std::string& what, DerivLorentzianFit last) : Error(what), last_(last) {}
  const DerivLorentzianFit& last_iterate() const noexcept { return last_; }
  double residual_rms() const noexcept { return last_.residual_rms; }

 private:
  DerivLorentzianFit last_;
};

/// d/du of a unit Lorentzian in u = (f - f0)/(gamma/2), scaled to a peak of 1
/// at u = 1/sqrt(3); positive for u > 0.
inline double derivative_lorentzian_shape(double u) {
  constexpr double k = 3.0792014356780038;  // 16 sqrt(3) / 9
  const double d = 1.0 + u * u;
  return k * u / (d * d);
}

double triplet_model(const DerivLorentzianFit& p, double f);
/// dV/df of the triplet model.
double triplet_model_slope(const DerivLorentzianFit& p, double f);

struct SweepPlan {
  double f_start = 2.845e9;
  double f_stop = 2.860e9;
  std::size_t n_points = 151;
  double dwell = 0.1;       // s
  double settle_tau = 5.0;  // time constants discarded per point
};

/// Steps the carrier over the plan's grid; per point a fresh run with a
/// derived seed, reporting the settled mean of I and Q.
OdmrSpectrum odmr_sweep(const SensorSetup& sensor, const SweepPlan& plan, std::vector<std::string>* warnings = nullptr);

/// Starting point: center from the median strong zero crossing, gamma from
/// the peak-to-trough spacing around it, baseline from the median.
DerivLorentzianFit initial_guess(const OdmrSpectrum& spec, double hf_split = 2.158e6);

struct FitOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-10;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) fit of the in-phase channel.
DerivLorentzianFit fit_triplet(const OdmrSpectrum& spec, const DerivLorentzianFit& init, const FitOptions& opts = {});

/// Cumulative trapezoidal integral of I over frequency, rescaled to [0, 1].
std::vector<double> integrate_spectrum(const OdmrSpectrum& spec);

void write_spectrum_csv(const std::filesystem::path& path, const OdmrSpectrum& spec);
OdmrSpectrum read_spectrum_csv(const std::filesystem::path& path);

}  // namespace qmagpi
