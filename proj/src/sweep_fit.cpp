#include "qmagpi/sweep_fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

#include "qmagpi/csv.hpp"

namespace qmagpi {

namespace {

constexpr std::array<int, 3> kHyperfine{-1, 0, +1};

double shape_slope(double u) {
  constexpr double k = 3.0792014356780038;
  const double d = 1.0 + u * u;
  return k * (1.0 - 3.0 * u * u) / (d * d * d);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// Scaled parameter vector: [center, gamma, amplitude, hf_split, baseline].
using Params = Eigen::Matrix<double, 5, 1>;

struct Problem {
  std::vector<double> x;  // (f - f_ref) / f_scale
  std::vector<double> y;  // V / v_scale

  double cost(const Params& p, Eigen::VectorXd* r = nullptr) const {
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double m = p[4];
      for (int h : kHyperfine) m += p[2] * derivative_lorentzian_shape(2.0 * (x[i] - p[0] - h * p[3]) / p[1]);
      const double ri = m - y[i];
      if (r) (*r)[static_cast<Eigen::Index>(i)] = ri;
      c += ri * ri;
    }
    return 0.5 * c;
  }

  void jacobian(const Params& p, Eigen::MatrixXd& J) const {
    for (std::size_t i = 0; i < x.size(); ++i) {
      double dc = 0.0, dg = 0.0, da = 0.0, ds = 0.0;
      for (int h : kHyperfine) {
        const double u = 2.0 * (x[i] - p[0] - h * p[3]) / p[1];
        const double sp = shape_slope(u);
        da += derivative_lorentzian_shape(u);
        dc += sp * (-2.0 / p[1]);
        dg += sp * (-u / p[1]);
        ds += sp * (-2.0 * h / p[1]);
      }
      const auto row = static_cast<Eigen::Index>(i);
      J(row, 0) = p[2] * dc;
      J(row, 1) = p[2] * dg;
      J(row, 2) = da;
      J(row, 3) = p[2] * ds;
      J(row, 4) = 1.0;
    }
  }
};

}  // namespace

void OdmrSpectrum::validate() const {
  if (freqs.size() != i_phase.size() || freqs.size() != quadrature.size()) {
    throw InvalidArgument("OdmrSpectrum: column lengths differ");
  }
  for (std::size_t k = 1; k < freqs.size(); ++k) {
    if (!(freqs[k] > freqs[k - 1])) throw InvalidArgument("OdmrSpectrum: frequencies must strictly increase");
  }
}

double triplet_model(const DerivLorentzianFit& p, double f) {
  double v = p.baseline;
  for (int h : kHyperfine) v += p.amplitude * derivative_lorentzian_shape(2.0 * (f - p.center - h * p.hf_split) / p.gamma);
  return v;
}

double triplet_model_slope(const DerivLorentzianFit& p, double f) {
  double s = 0.0;
  for (int h : kHyperfine) s += shape_slope(2.0 * (f - p.center - h * p.hf_split) / p.gamma);
  return p.amplitude * s * 2.0 / p.gamma;
}

OdmrSpectrum odmr_sweep(const SensorSetup& sensor, const SweepPlan& plan, std::vector<std::string>* warnings) {
  sensor.validate();
  if (!(plan.f_start < plan.f_stop)) throw InvalidArgument("odmr_sweep: need f_start < f_stop");
  if (plan.n_points < 10) throw InvalidArgument("odmr_sweep: need at least 10 points");
  if (!(plan.dwell > 0)) throw InvalidArgument("odmr_sweep: dwell must be > 0");
  const double tau = sensor.lockin.time_constant;
  if (warnings && plan.dwell < 3.0 * tau) warnings->push_back("odmr_sweep: dwell shorter than 3 lock-in time constants");
  const double discard = std::min(plan.settle_tau * tau, 0.5 * plan.dwell);

  OdmrSpectrum spec;
  spec.dwell = plan.dwell;
  spec.freqs.resize(plan.n_points);
  spec.i_phase.resize(plan.n_points);
  spec.quadrature.resize(plan.n_points);
  const double step = (plan.f_stop - plan.f_start) / static_cast<double>(plan.n_points - 1);
  for (std::size_t k = 0; k < plan.n_points; ++k) {
    const double fc = plan.f_start + static_cast<double>(k) * step;
    const auto point = sensor.with_carrier(fc).with_seed(derive_seed(sensor.noise.seed, k));
    const auto reading = settled_reading(point, plan.dwell, discard);
    spec.freqs[k] = fc;
    spec.i_phase[k] = reading.i;
    spec.quadrature[k] = reading.q;
  }
  return spec;
}

DerivLorentzianFit initial_guess(const OdmrSpectrum& spec, double hf_split) {
  spec.validate();
  const std::size_t n = spec.size();
  if (n < 5) throw InvalidArgument("initial_guess: spectrum too short");
  DerivLorentzianFit g;
  g.hf_split = hf_split;
  g.baseline = median(spec.i_phase);

  std::vector<double> s(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t lo = k < 2 ? 0 : k - 2;
    const std::size_t hi = std::min(n - 1, k + 2);
    double acc = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) acc += spec.i_phase[j] - g.baseline;
    s[k] = acc / static_cast<double>(hi - lo + 1);
  }
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, std::abs(v));
  const double span = spec.freqs.back() - spec.freqs.front();
  if (peak == 0.0) {
    g.center = 0.5 * (spec.freqs.front() + spec.freqs.back());
    g.gamma = span / 10.0;
    return g;
  }

  // Zero crossings between excursions beyond a hysteresis threshold.
  const double threshold = 0.25 * peak;
  std::vector<double> crossings;
  int last_sign = 0;
  std::size_t last_index = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(s[k]) < threshold) continue;
    const int sign = s[k] > 0 ? 1 : -1;
    if (last_sign != 0 && sign != last_sign) {
      for (std::size_t j = k; j > last_index; --j) {
        if ((s[j - 1] > 0) != (s[j] > 0) || s[j - 1] == 0.0) {
          const double w = s[j - 1] / (s[j - 1] - s[j]);
          crossings.push_back(spec.freqs[j - 1] + w * (spec.freqs[j] - spec.freqs[j - 1]));
          break;
        }
      }
    }
    last_sign = sign;
    last_index = k;
  }
  if (crossings.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (std::abs(s[k]) > std::abs(s[best])) best = k;
    }
    g.center = spec.freqs[best];
  } else {
    std::sort(crossings.begin(), crossings.end());
    g.center = crossings[crossings.size() / 2];
  }

  // Lobes of the central line: extremes within half a hyperfine spacing.
  const double half = hf_split > 0 ? 0.5 * hf_split : span / 4.0;
  std::size_t kmax = n, kmin = n;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(spec.freqs[k] - g.center) > half) continue;
    if (kmax == n || s[k] > s[kmax]) kmax = k;
    if (kmin == n || s[k] < s[kmin]) kmin = k;
  }
  const double step = span / static_cast<double>(n - 1);
  if (kmax == n || kmax == kmin) {
    g.gamma = span / 10.0;
    g.amplitude = peak;
  } else {
    g.gamma = std::max(std::sqrt(3.0) * std::abs(spec.freqs[kmax] - spec.freqs[kmin]), 2.0 * step);
    const bool max_right = spec.freqs[kmax] > spec.freqs[kmin];
    g.amplitude = 0.5 * (max_right ? s[kmax] - s[kmin] : s[kmin] - s[kmax]);
  }
  return g;
}

DerivLorentzianFit fit_triplet(const OdmrSpectrum& spec, const DerivLorentzianFit& init, const FitOptions& opts) {
  spec.validate();
  const std::size_t n = spec.size();
  if (n < 6) throw InvalidArgument("fit_triplet: need at least 6 points");
  if (!(init.gamma > 0)) throw InvalidArgument("fit_triplet: initial gamma must be > 0");

  const double f_ref = init.center;
  const double f_scale = init.gamma;
  double v_scale = 0.0;
  for (double v : spec.i_phase) v_scale = std::max(v_scale, std::abs(v - init.baseline));
  if (v_scale == 0.0) v_scale = std::max(std::abs(init.baseline), 1.0);

  Problem prob;
  prob.x.resize(n);
  prob.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    prob.x[i] = (spec.freqs[i] - f_ref) / f_scale;
    prob.y[i] = spec.i_phase[i] / v_scale;
  }
  Params p;
  p << 0.0, 1.0, init.amplitude / v_scale, init.hf_split / f_scale, init.baseline / v_scale;

  auto unscale = [&](const Params& q, double cost) {
    DerivLorentzianFit out = init;
    out.center = f_ref + q[0] * f_scale;
    out.gamma = q[1] * f_scale;
    out.amplitude = q[2] * v_scale;
    out.hf_split = q[3] * f_scale;
    out.baseline = q[4] * v_scale;
    out.residual_rms = std::sqrt(2.0 * cost / static_cast<double>(n)) * v_scale;
    return out;
  };

  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), 5);
  double cost = prob.cost(p);
  double lambda = 1e-3;
  bool converged = cost <= 1e-30 * static_cast<double>(n);
  int iter = 0;
  while (!converged && iter < opts.max_iterations) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    prob.cost(p, &r);
    prob.jacobian(p, J);
    const Eigen::Matrix<double, 5, 5> A = J.transpose() * J;
    const Params g = J.transpose() * r;
    bool accepted = false;
    while (!accepted && iter < opts.max_iterations) {
      ++iter;
      Eigen::Matrix<double, 5, 5> M = A;
      for (int k = 0; k < 5; ++k) M(k, k) += lambda * std::max(A(k, k), 1e-12);
      const Params step = M.ldlt().solve(-g);
      const Params trial = p + step;
      const double trial_cost = (trial[1] > 0 && trial[3] >= 0 && step.allFinite()) ? prob.cost(trial) : INFINITY;
      if (trial_cost < cost) {
        const double rel = (cost - trial_cost) / cost;
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < opts.relative_tolerance || cost <= 1e-30 * static_cast<double>(n)) converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          // No descent direction left at working precision.
          converged = true;
          break;
        }
      }
    }
  }

  DerivLorentzianFit fit = unscale(p, cost);
  fit.iterations = iter;
  if (!converged) throw FitFailed("fit_triplet: no convergence within the iteration budget", fit);

  fit.zc_slope = triplet_model_slope(fit, fit.center);
  const std::size_t grid = 10 * (n - 1) + 1;
  const double f0 = spec.freqs.front();
  const double df = (spec.freqs.back() - f0) / static_cast<double>(grid - 1);
  for (std::size_t k = 0; k < grid; ++k) {
    fit.max_slope = std::max(fit.max_slope, std::abs(triplet_model_slope(fit, f0 + static_cast<double>(k) * df)));
  }
  return fit;
}

std::vector<double> integrate_spectrum(const OdmrSpectrum& spec) {
  spec.validate();
  const std::size_t n = spec.size();
  if (n < 2) throw InvalidArgument("integrate_spectrum: need at least two points");
  const double step = (spec.freqs.back() - spec.freqs.front()) / static_cast<double>(n - 1);
  for (std::size_t k = 1; k < n; ++k) {
    if (std::abs(spec.freqs[k] - spec.freqs[k - 1] - step) > 1e-6 * step) {
      throw InvalidArgument("integrate_spectrum: frequency grid is not uniform");
    }
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) out[k] = out[k - 1] + 0.5 * step * (spec.i_phase[k - 1] + spec.i_phase[k]);
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double min = *lo;
  const double range = *hi - *lo;
  if (!(range > 0)) throw InvalidArgument("integrate_spectrum: spectrum integrates to a constant");
  for (auto& v : out) v = (v - min) / range;
  return out;
}

void write_spectrum_csv(const std::filesystem::path& path, const OdmrSpectrum& spec) {
  spec.validate();
  csv::write_columns(path, {"freq_hz", "i_v", "q_v"}, {&spec.freqs, &spec.i_phase, &spec.quadrature});
}

OdmrSpectrum read_spectrum_csv(const std::filesystem::path& path) {
  auto table = csv::read(path, {"freq_hz", "i_v", "q_v"});
  OdmrSpectrum spec;
  spec.freqs = std::move(table.columns[0]);
  spec.i_phase = std::move(table.columns[1]);
  spec.quadrature = std::move(table.columns[2]);
  spec.validate();
  return spec;
}

}  // namespace qmagpi
