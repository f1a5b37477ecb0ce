#include "qmagpi/analysis.hpp"

#include <fftw3.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <memory>
#include <numbers>

#include "qmagpi/csv.hpp"
#include "qmagpi/error.hpp"

namespace qmagpi {

SensitivityReport sensitivity_esr(double sigma, double tau, double slope, double gamma_e) {
  if (slope == 0.0 || !std::isfinite(slope)) throw InvalidArgument("sensitivity_esr: zero slope");
  if (!(sigma >= 0) || !(tau > 0) || !(gamma_e > 0)) throw InvalidArgument("sensitivity_esr: bad inputs");
  SensitivityReport r;
  r.sigma = sigma;
  r.tau = tau;
  r.slope = std::abs(slope);
  r.gamma_e = gamma_e;
  r.eta = sigma * std::sqrt(tau) / (gamma_e * r.slope);
  return r;
}

double shot_noise_sensitivity(double gamma_e, double linewidth, double contrast, double rate) {
  if (!(gamma_e > 0) || !(linewidth > 0) || !(rate > 0)) throw InvalidArgument("shot_noise_sensitivity: bad inputs");
  if (!(contrast > 0 && contrast < 1)) throw InvalidArgument("shot_noise_sensitivity: contrast must lie in (0, 1)");
  return kLorentzianLineshapeFactor / gamma_e * linewidth / (contrast * std::sqrt(rate));
}

// --- spectra ---------------------------------------------------------------

namespace {

struct FftwPlan {
  fftw_plan plan = nullptr;
  double* in = nullptr;
  fftw_complex* out = nullptr;

  explicit FftwPlan(std::size_t n) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

}  // namespace

PsdResult psd(const TimeSeries& ts, std::size_t segments, double overlap_fraction, Window window) {
  ts.validate();
  if (segments < 1) throw InvalidArgument("psd: need at least one segment");
  if (!(overlap_fraction >= 0 && overlap_fraction < 1)) throw InvalidArgument("psd: overlap must lie in [0, 1)");
  const std::size_t n = ts.size();
  if (n < 2 * segments) throw InvalidArgument("psd: series shorter than 2 x segments");
  const double k = static_cast<double>(segments);
  const auto len = static_cast<std::size_t>(std::floor(static_cast<double>(n) / (1.0 + (k - 1.0) * (1.0 - overlap_fraction))));
  if (len < 2) throw InvalidArgument("psd: segments too short");
  const std::size_t stride = segments > 1 ? (n - len) / (segments - 1) : 0;

  std::vector<double> w(len, 1.0);
  if (window == Window::hann) {
    for (std::size_t i = 0; i < len; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len));
    }
  }
  double w2 = 0.0;
  for (double v : w) w2 += v * v;

  const double fs = ts.sample_rate();
  const std::size_t bins = len / 2 + 1;
  PsdResult r;
  r.segment_count = segments;
  r.window_name = window == Window::hann ? "hann" : "rectangular";
  r.df = fs / static_cast<double>(len);
  r.freqs.resize(bins);
  r.psd_v.assign(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) r.freqs[b] = static_cast<double>(b) * r.df;

  FftwPlan fft(len);
  for (std::size_t s = 0; s < segments; ++s) {
    const double* seg = ts.values.data() + s * stride;
    double m = 0.0;
    for (std::size_t i = 0; i < len; ++i) m += seg[i];
    m /= static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i) fft.in[i] = (seg[i] - m) * w[i];
    fftw_execute(fft.plan);
    for (std::size_t b = 0; b < bins; ++b) {
      const double p = fft.out[b][0] * fft.out[b][0] + fft.out[b][1] * fft.out[b][1];
      const bool edge = b == 0 || (len % 2 == 0 && b == len / 2);
      r.psd_v[b] += (edge ? 1.0 : 2.0) * p / (fs * w2);
    }
  }
  for (auto& v : r.psd_v) v /= k;
  return r;
}

PsdResult average_psd(std::span<const PsdResult> spectra) {
  if (spectra.empty()) throw InvalidArgument("average_psd: no spectra");
  PsdResult out = spectra.front();
  for (std::size_t s = 1; s < spectra.size(); ++s) {
    const auto& sp = spectra[s];
    if (sp.freqs.size() != out.freqs.size() || sp.df != out.df || sp.psd_b.size() != out.psd_b.size()) {
      throw InvalidArgument("average_psd: spectra differ in layout");
    }
    for (std::size_t b = 0; b < out.psd_v.size(); ++b) out.psd_v[b] += sp.psd_v[b];
    for (std::size_t b = 0; b < out.psd_b.size(); ++b) out.psd_b[b] += sp.psd_b[b];
    out.segment_count += sp.segment_count;
  }
  const auto count = static_cast<double>(spectra.size());
  for (auto& v : out.psd_v) v /= count;
  for (auto& v : out.psd_b) v /= count;
  return out;
}

void scale_to_field(PsdResult& result, double zc_slope, double gamma_e) {
  if (zc_slope == 0.0 || !(gamma_e > 0)) throw InvalidArgument("scale_to_field: zero slope");
  const double k = 1.0 / (zc_slope * gamma_e * zc_slope * gamma_e);
  result.psd_b.resize(result.psd_v.size());
  for (std::size_t b = 0; b < result.psd_v.size(); ++b) result.psd_b[b] = result.psd_v[b] * k;
}

void deembed(PsdResult& result, const std::function<double(double)>& power_response) {
  for (std::size_t b = 0; b < result.freqs.size(); ++b) {
    const double h2 = power_response(result.freqs[b]);
    if (!(h2 > 0)) throw InvalidArgument("deembed: non-positive filter response");
    result.psd_v[b] /= h2;
    if (b < result.psd_b.size()) result.psd_b[b] /= h2;
  }
}

double band_mean(const std::vector<double>& freqs, const std::vector<double>& values, double f_lo, double f_hi) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < freqs.size() && b < values.size(); ++b) {
    if (freqs[b] >= f_lo && freqs[b] <= f_hi) {
      acc += values[b];
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("band_mean: no bins inside the band");
  return acc / static_cast<double>(n);
}

double field_noise_floor(const PsdResult& result, double f_lo, double f_hi) {
  if (result.psd_b.empty()) throw InvalidArgument("field_noise_floor: spectrum has no field scaling");
  return std::sqrt(band_mean(result.freqs, result.psd_b, f_lo, f_hi) / 2.0);
}

void write_psd_csv(const std::filesystem::path& path, const PsdResult& result) {
  std::vector<double> b = result.psd_b;
  if (b.empty()) b.assign(result.psd_v.size(), std::nan(""));
  csv::write_columns(path, {"freq_hz", "psd_v2hz", "psd_t2hz"}, {&result.freqs, &result.psd_v, &b});
}

// --- Allan deviation -------------------------------------------------------

AllanResult overlapping_allan(const TimeSeries& ts, const std::vector<double>& taus, double confidence,
                              EdfModel model) {
  ts.validate();
  if (!(confidence > 0 && confidence < 1)) throw InvalidArgument("overlapping_allan: confidence must lie in (0, 1)");
  const std::size_t n = ts.size();
  const double m0 = mean(ts.values);
  // Phase (integrated) data, n + 1 points.
  std::vector<double> x(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) x[i + 1] = x[i] + (ts.values[i] - m0) * ts.dt;

  AllanResult r;
  for (double tau : taus) {
    const double mf = tau / ts.dt;
    const auto m = static_cast<std::size_t>(std::llround(mf));
    if (m < 1 || std::abs(mf - static_cast<double>(m)) > 1e-9 * mf) {
      throw InvalidArgument("overlapping_allan: tau is not an integer multiple of dt");
    }
    if (n < 2 * m) throw InvalidArgument("overlapping_allan: series too short for tau");
    const std::size_t terms = n - 2 * m + 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < terms; ++i) {
      const double d = x[i + 2 * m] - 2.0 * x[i + m] + x[i];
      acc += d * d;
    }
    const double t = static_cast<double>(m) * ts.dt;
    const double avar = acc / (2.0 * t * t * static_cast<double>(terms));
    const double adev = std::sqrt(avar);

    double edf = 0.0;
    if (model == EdfModel::white_fm) {
      const double np = static_cast<double>(n + 1);
      const double md = static_cast<double>(m);
      edf = (3.0 * (np - 1.0) / (2.0 * md) - 2.0 * (np - 2.0) / np) * 4.0 * md * md / (4.0 * md * md + 5.0);
    } else {
      edf = std::floor(static_cast<double>(n) / static_cast<double>(m)) - 1.0;
    }
    edf = std::max(edf, 1.0);
    boost::math::chi_squared dist(edf);
    const double alpha = 0.5 * (1.0 - confidence);
    const double chi_hi = boost::math::quantile(dist, 1.0 - alpha);
    const double chi_lo = boost::math::quantile(dist, alpha);

    r.taus.push_back(t);
    r.adev.push_back(adev);
    r.ci_low.push_back(adev * std::sqrt(edf / chi_hi));
    r.ci_high.push_back(adev * std::sqrt(edf / chi_lo));
    r.n_samples.push_back(terms);
  }
  return r;
}

std::vector<double> allan_tau_grid(const TimeSeries& ts, std::size_t per_decade) {
  std::vector<double> taus;
  const std::size_t max_m = ts.size() / 3;
  std::size_t last = 0;
  for (double e = 0.0;; e += 1.0 / static_cast<double>(per_decade)) {
    const auto m = static_cast<std::size_t>(std::llround(std::pow(10.0, e)));
    if (m > max_m) break;
    if (m != last) taus.push_back(static_cast<double>(m) * ts.dt);
    last = m;
  }
  return taus;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y, double x_lo, double x_hi) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (x[i] >= x_lo && x[i] <= x_hi && x[i] > 0 && y[i] > 0) {
      lx.push_back(std::log10(x[i]));
      ly.push_back(std::log10(y[i]));
    }
  }
  return linear_fit(lx, ly).slope;
}

void write_allan_csv(const std::filesystem::path& path, const AllanResult& result) {
  csv::write_columns(path, {"tau_s", "adev", "ci_lo", "ci_hi"},
                     {&result.taus, &result.adev, &result.ci_low, &result.ci_high});
}

// --- distributions and fits ------------------------------------------------

GaussianFit gaussian_fit(std::span<const double> values) {
  if (values.size() < 100) throw InvalidArgument("gaussian_fit: need at least 100 samples");
  GaussianFit g;
  double s = 0.0;
  for (double v : values) s += v;
  g.mean = s / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - g.mean) * (v - g.mean);
  g.sigma = std::sqrt(ss / static_cast<double>(values.size()));
  g.flagged = g.sigma == 0.0;

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < sorted.size() ? sorted[i] + frac * (sorted[i + 1] - sorted[i]) : sorted[i];
  };
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double width = 2.0 * (quantile(0.75) - quantile(0.25)) / std::cbrt(static_cast<double>(sorted.size()));
  std::size_t bins = 1;
  if (width > 0 && hi > lo) bins = std::min<std::size_t>(10000, static_cast<std::size_t>(std::ceil((hi - lo) / width)));
  bins = std::max<std::size_t>(bins, 1);
  const double bw = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  g.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) g.bin_edges[b] = lo + static_cast<double>(b) * bw;
  g.counts.assign(bins, 0);
  for (double v : sorted) {
    auto b = static_cast<std::size_t>((v - lo) / bw);
    ++g.counts[std::min(b, bins - 1)];
  }
  return g;
}

std::vector<double> gaussian_smooth(std::span<const double> values, double sigma_samples) {
  if (!(sigma_samples > 0)) throw InvalidArgument("gaussian_smooth: sigma must be > 0");
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma_samples));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  for (std::ptrdiff_t j = -half; j <= half; ++j) {
    const double u = static_cast<double>(j) / sigma_samples;
    kernel[static_cast<std::size_t>(j + half)] = std::exp(-0.5 * u * u);
  }
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  std::vector<double> out(values.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(-half, -i); j <= half && i + j < n; ++j) {
      const double w = kernel[static_cast<std::size_t>(j + half)];
      acc += w * values[static_cast<std::size_t>(i + j)];
      wsum += w;
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
  return out;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("linear_fit: need two or more paired samples");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0)) throw InvalidArgument("linear_fit: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - (f.slope * x[i] + f.intercept);
      rss += r * r;
    }
    f.slope_stderr = std::sqrt(rss / (n - 2.0) / sxx);
  }
  return f;
}

}  // namespace qmagpi
