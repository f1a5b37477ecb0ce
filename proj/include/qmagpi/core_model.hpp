#pragma once

#include <array>
#include <span>
#include <vector>

namespace qmagpi {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

/// The four {111} NV symmetry axes, normalized. Pairwise dot products are -1/3.
std::array<Vec3, 4> nv_axes();

/// Physical constants and lineshape parameters of the NV ensemble.
struct NvEnsembleParams {
  double zero_field_splitting = 2.87e9;  // Hz
  double gamma_e = 28.024e9;             // Hz/T
  double hyperfine_split = 2.158e6;      // Hz, 14N
  double linewidth = 1.0e6;              // FWHM per hyperfine line, Hz
  double contrast = 0.0015;              // dip depth per hyperfine line
  double photon_rate = 7.5e14;           // detected photons/s
  double temp_coefficient = -74e3;       // Hz/K
  std::array<Vec3, 4> axes = nv_axes();

  /// Throws InvalidArgument when an invariant does not hold.
  void validate() const;
};

/// Static bias field in tesla.
struct BiasField {
  Vec3 vector{0.0, 0.0, 0.0};

  static constexpr double max_magnitude = 0.01;  // T, first-order Zeeman bound
  double magnitude() const;
  void validate() const;
};

struct ResonanceLine {
  double frequency = 0.0;  // Hz
  int axis_index = 0;      // 0..3
  int branch = +1;         // +1: ms=0 -> +1, -1: ms=0 -> -1
  int hyperfine_index = 0;  // -1, 0, +1
  double relative_amplitude = 1.0;
};

inline constexpr std::size_t kLineCount = 24;

/// All 24 first-order Zeeman + hyperfine lines, sorted by frequency.
/// `delta_t` is the temperature excursion in kelvin.
std::vector<ResonanceLine> resonance_frequencies(const NvEnsembleParams& params, const BiasField& field,
                                                 double delta_t = 0.0);

/// Normalized Lorentzian, 1 at the center and 1/2 at center +- fwhm/2.
inline double lorentzian(double f, double center, double fwhm) {
  const double hw = 0.5 * fwhm;
  const double x = f - center;
  return hw * hw / (x * x + hw * hw);
}

/// Relative photoluminescence 1 - sum_i C * amp_i * L(f_mw; f_i, linewidth).
double odmr_fluorescence(const NvEnsembleParams& params, std::span<const ResonanceLine> lines, double f_mw);

/// Bias field whose projections onto the four axes produce the requested
/// Zeeman shifts gamma_e * (B . n_k), in Hz. The shifts must sum to zero
/// because the four axes do.
BiasField bias_for_projections(const NvEnsembleParams& params, const std::array<double, 4>& shifts_hz);

}  // namespace qmagpi
