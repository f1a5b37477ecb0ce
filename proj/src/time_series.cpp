#include "qmagpi/time_series.hpp"

#include <cmath>

#include "qmagpi/error.hpp"

namespace qmagpi {

double TimeSeries::at(double t) const {
  if (values.empty()) throw InvalidArgument("TimeSeries::at: empty series");
  const double pos = (t - t0) / dt;
  if (pos <= 0.0) return values.front();
  const auto last = static_cast<double>(values.size() - 1);
  if (pos >= last) return values.back();
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return values[i] + frac * (values[i + 1] - values[i]);
}

void TimeSeries::validate() const {
  if (!(dt > 0) || !std::isfinite(dt)) throw InvalidArgument("TimeSeries: dt must be > 0");
  if (!std::isfinite(t0)) throw InvalidArgument("TimeSeries: t0 must be finite");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("TimeSeries: non-finite value");
  }
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace qmagpi
