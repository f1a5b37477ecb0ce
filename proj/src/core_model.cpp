#include "qmagpi/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qmagpi/error.hpp"

namespace qmagpi {

std::array<Vec3, 4> nv_axes() {
  const double s = 1.0 / std::sqrt(3.0);
  return {{{s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}}};
}

void NvEnsembleParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("NvEnsembleParams: ") + what);
  };
  require(std::isfinite(zero_field_splitting) && zero_field_splitting > 0, "zero_field_splitting must be > 0");
  require(std::isfinite(gamma_e) && gamma_e > 0, "gamma_e must be > 0");
  require(std::isfinite(hyperfine_split) && hyperfine_split >= 0, "hyperfine_split must be >= 0");
  require(std::isfinite(linewidth) && linewidth > 0, "linewidth must be > 0");
  require(contrast > 0 && contrast < 1, "contrast must lie in (0, 1)");
  require(std::isfinite(photon_rate) && photon_rate > 0, "photon_rate must be > 0");
  require(std::isfinite(temp_coefficient), "temp_coefficient must be finite");
  for (std::size_t i = 0; i < axes.size(); ++i) {
    require(std::abs(std::sqrt(dot(axes[i], axes[i])) - 1.0) <= 1e-12, "axes must have unit norm");
    for (std::size_t j = i + 1; j < axes.size(); ++j) {
      require(std::abs(std::abs(dot(axes[i], axes[j])) - 1.0 / 3.0) <= 1e-12,
              "axis pairs must have dot product +-1/3");
    }
  }
}

double BiasField::magnitude() const { return std::sqrt(dot(vector, vector)); }

void BiasField::validate() const {
  for (double c : vector) {
    if (!std::isfinite(c)) throw InvalidArgument("BiasField: non-finite component");
  }
  if (magnitude() > max_magnitude) throw InvalidArgument("BiasField: magnitude exceeds 10 mT");
}

std::vector<ResonanceLine> resonance_frequencies(const NvEnsembleParams& params, const BiasField& field,
                                                 double delta_t) {
  field.validate();
  if (!std::isfinite(delta_t)) throw InvalidArgument("resonance_frequencies: non-finite temperature");
  std::vector<ResonanceLine> lines;
  lines.reserve(kLineCount);
  const double base = params.zero_field_splitting + params.temp_coefficient * delta_t;
  for (int axis = 0; axis < 4; ++axis) {
    const double zeeman = params.gamma_e * std::abs(dot(field.vector, params.axes[axis]));
    for (int branch : {+1, -1}) {
      for (int hf : {-1, 0, +1}) {
        lines.push_back({base + branch * zeeman + hf * params.hyperfine_split, axis, branch, hf, 1.0});
      }
    }
  }
  std::stable_sort(lines.begin(), lines.end(),
                   [](const ResonanceLine& a, const ResonanceLine& b) { return a.frequency < b.frequency; });
  return lines;
}

double odmr_fluorescence(const NvEnsembleParams& params, std::span<const ResonanceLine> lines, double f_mw) {
  if (lines.empty()) throw InvalidArgument("odmr_fluorescence: no resonance lines");
  if (!(f_mw > 0)) throw InvalidArgument("odmr_fluorescence: microwave frequency must be > 0");
  double dip = 0.0;
  for (const auto& line : lines) {
    dip += line.relative_amplitude * lorentzian(f_mw, line.frequency, params.linewidth);
  }
  const double pl = 1.0 - params.contrast * dip;
  if (!(pl > 0)) throw InvalidArgument("odmr_fluorescence: overlapping dips exceed unit fluorescence");
  return pl;
}

BiasField bias_for_projections(const NvEnsembleParams& params, const std::array<double, 4>& shifts_hz) {
  double sum = 0.0;
  double scale = 0.0;
  for (double s : shifts_hz) {
    sum += s;
    scale = std::max(scale, std::abs(s));
  }
  if (std::abs(sum) > 1e-9 * std::max(scale, 1.0)) {
    throw InvalidArgument("bias_for_projections: shifts must sum to zero");
  }
  // sum_k n_k n_k^T = (4/3) I for the tetrahedral set.
  BiasField field;
  for (int k = 0; k < 4; ++k) {
    for (int c = 0; c < 3; ++c) field.vector[c] += 0.75 * shifts_hz[k] / params.gamma_e * params.axes[k][c];
  }
  field.validate();
  return field;
}

}  // namespace qmagpi
