#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace qmagpi {

/// Uniformly sampled signal.
struct TimeSeries {
  double t0 = 0.0;  // s
  double dt = 1.0;  // s
  std::vector<double> values;
  std::string unit;

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  double time(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  double sample_rate() const { return 1.0 / dt; }
  double duration() const { return static_cast<double>(values.size()) * dt; }

  /// Linear interpolation, held constant outside the sampled span.
  double at(double t) const;

  /// Throws InvalidArgument unless dt > 0 and every value is finite.
  void validate() const;
};

double mean(const std::vector<double>& v);
/// Population variance (divides by N).
double variance(const std::vector<double>& v);

}  // namespace qmagpi
