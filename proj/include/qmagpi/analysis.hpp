#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qmagpi/time_series.hpp"

namespace qmagpi {

// --- sensitivity -----------------------------------------------------------

struct SensitivityReport {
  double eta = 0.0;    // T/sqrt(Hz)
  double sigma = 0.0;  // V
  double tau = 0.0;    // s
  double slope = 0.0;  // V/Hz
  double gamma_e = 0.0;  // Hz/T
};

/// eta = sigma sqrt(tau) / (gamma_e slope). Uses |slope|; throws on zero slope.
SensitivityReport sensitivity_esr(double sigma, double tau, double slope, double gamma_e);

/// Lineshape factor for a Lorentzian resonance, 4 / (3 sqrt 3).
inline constexpr double kLorentzianLineshapeFactor = 0.76980035891950105;

/// Photon-shot-noise limit P_F / gamma_e * linewidth / (contrast sqrt(rate)).
double shot_noise_sensitivity(double gamma_e, double linewidth, double contrast, double rate);

// --- spectra ---------------------------------------------------------------

enum class Window { hann, rectangular };

struct PsdResult {
  std::vector<double> freqs;  // Hz
  std::vector<double> psd_v;  // V^2/Hz, one-sided
  std::vector<double> psd_b;  // T^2/Hz, filled by scale_to_field
  std::size_t segment_count = 0;
  std::string window_name;
  double df = 0.0;  // bin width, Hz
};

/// Welch-averaged one-sided density. Each segment has its mean removed and
/// is normalized by the window power, so sum(psd) * df equals the
/// window-weighted variance of the segment exactly.
PsdResult psd(const TimeSeries& ts, std::size_t segments, double overlap_fraction = 0.5, Window window = Window::hann);

/// Bin-wise mean of spectra computed with identical settings.
PsdResult average_psd(std::span<const PsdResult> spectra);

/// psd_b = psd_v / (zc_slope gamma_e)^2.
void scale_to_field(PsdResult& result, double zc_slope, double gamma_e);

/// Divides both densities by a filter power response |H(f)|^2 to refer the
/// spectrum to the filter input.
void deembed(PsdResult& result, const std::function<double(double)>& power_response);

/// Mean of `values` over bins with f_lo <= f <= f_hi.
double band_mean(const std::vector<double>& freqs, const std::vector<double>& values, double f_lo, double f_hi);

/// Field noise floor in T/sqrt(Hz) as the one-second-equivalent deviation,
/// sqrt(mean(psd_b) / 2) over the band.
double field_noise_floor(const PsdResult& result, double f_lo, double f_hi);

void write_psd_csv(const std::filesystem::path& path, const PsdResult& result);

// --- Allan deviation -------------------------------------------------------

enum class EdfModel { white_fm, conservative };

struct AllanResult {
  std::vector<double> taus;  // s
  std::vector<double> adev;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<std::size_t> n_samples;  // overlapping difference terms per tau
};

/// Overlapping Allan deviation of rate-like samples (one value per dt).
/// Each tau must be an integer multiple m of dt with size >= 2m. Confidence
/// intervals come from chi-squared with the chosen EDF model.
AllanResult overlapping_allan(const TimeSeries& ts, const std::vector<double>& taus, double confidence = 0.683,
                              EdfModel model = EdfModel::white_fm);

/// Roughly log-spaced taus (integer multiples of dt) up to size/3 samples.
std::vector<double> allan_tau_grid(const TimeSeries& ts, std::size_t per_decade = 5);

/// Least-squares slope of log10(y) against log10(x) over x in [x_lo, x_hi].
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y, double x_lo, double x_hi);

void write_allan_csv(const std::filesystem::path& path, const AllanResult& result);

// --- distributions and fits ------------------------------------------------

struct GaussianFit {
  double mean = 0.0;
  double sigma = 0.0;
  bool flagged = false;  // zero spread
  std::vector<double> bin_edges;  // Freedman-Diaconis, for reporting
  std::vector<std::size_t> counts;
};

/// Maximum-likelihood normal parameters of at least 100 samples.
GaussianFit gaussian_fit(std::span<const double> values);

/// Gaussian kernel smoothing, sigma in samples; edges renormalized.
std::vector<double> gaussian_smooth(std::span<const double> values, double sigma_samples);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

/// Ordinary least squares y = slope x + intercept; needs two distinct x.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

}  // namespace qmagpi
