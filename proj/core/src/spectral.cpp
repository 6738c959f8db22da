#include "ionmirror/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <optional>

#include <Eigen/Dense>
#include <fftw3.h>

#include "ionmirror/photon.hpp"

namespace ionmirror::spectral {

namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

}  // namespace

WindowKind parse_window(const std::string& name) {
  if (name == "hann") return WindowKind::hann;
  if (name == "rectangular" || name == "rect" || name == "none") return WindowKind::rectangular;
  throw SpectralError("unknown window kind '" + name + "' (expected hann or rectangular)");
}

const char* window_name(WindowKind kind) {
  return kind == WindowKind::hann ? "hann" : "rectangular";
}

std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::hann) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
    }
  }
  return w;
}

std::vector<double> bin_correlation(std::span<const double> window, std::size_t max_lag) {
  const std::size_t n = window.size();
  double sum_w2 = 0.0;
  for (double x : window) sum_w2 += x * x;
  std::vector<double> rho(max_lag + 1, 0.0);
  if (sum_w2 <= 0.0) return rho;
  for (std::size_t j = 0; j <= max_lag; ++j) {
    std::complex<double> c{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const double ph = -2.0 * std::numbers::pi * static_cast<double>(j * i % n) /
                        static_cast<double>(n);
      c += window[i] * window[i] * std::polar(1.0, ph);
    }
    rho[j] = std::norm(c / sum_w2);
  }
  return rho;
}

double PowerSpectrum::integrated_power() const {
  double s = 0.0;
  for (double p : psd) s += p;
  return s * resolution_bandwidth;
}

void WelchSettings::validate() const {
  if (!(sample_interval > 0.0)) throw SpectralError("sample interval must be > 0");
  if (segment_length < 2) throw SpectralError("segment length must be >= 2");
  if (!(overlap >= 0.0 && overlap <= 0.9)) throw SpectralError("overlap must lie in [0, 0.9]");
}

std::size_t WelchSettings::hop() const {
  const auto h = static_cast<std::size_t>(
      std::llround(static_cast<double>(segment_length) * (1.0 - overlap)));
  return std::max<std::size_t>(1, h);
}

std::size_t segment_length_for(double resolution_bandwidth_hz, double sample_interval) {
  if (!(resolution_bandwidth_hz > 0.0) || !(sample_interval > 0.0)) {
    throw SpectralError("resolution bandwidth and sample interval must be > 0");
  }
  const auto n = static_cast<std::size_t>(std::llround(1.0 / (resolution_bandwidth_hz * sample_interval)));
  return std::max<std::size_t>(2, n);
}

struct WelchEstimator::Impl {
  WelchSettings settings;
  double mean;
  std::vector<double> window;
  double sum_w2 = 0.0;
  std::vector<double> pending;
  std::size_t start = 0;
  std::vector<double> accum;
  std::size_t segments = 0;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  Impl(WelchSettings s, double m) : settings(s), mean(m) {
    settings.validate();
    const std::size_t n = settings.segment_length;
    window = make_window(settings.window, n);
    for (double w : window) sum_w2 += w * w;
    accum.assign(n / 2 + 1, 0.0);
    std::lock_guard lock(planner_mutex());
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    if (!plan) throw SpectralError("FFT plan creation failed");
  }

  ~Impl() {
    std::lock_guard lock(planner_mutex());
    if (plan) fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }

  void process(const double* x) {
    const std::size_t n = settings.segment_length;
    for (std::size_t i = 0; i < n; ++i) in[i] = (x[i] - mean) * window[i];
    fftw_execute(plan);
    for (std::size_t k = 0; k < accum.size(); ++k) {
      accum[k] += out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
    ++segments;
  }

  void push(std::span<const double> samples) {
    pending.insert(pending.end(), samples.begin(), samples.end());
    const std::size_t n = settings.segment_length;
    const std::size_t hop = settings.hop();
    while (pending.size() - start >= n) {
      process(pending.data() + start);
      start += hop;
    }
    if (start > 0 && start >= pending.size() / 2) {
      const std::size_t drop = std::min(start, pending.size());
      pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(drop));
      start -= drop;
    }
  }
};

WelchEstimator::WelchEstimator(WelchSettings settings, double mean)
    : impl_(std::make_unique<Impl>(settings, mean)) {}
WelchEstimator::~WelchEstimator() = default;
WelchEstimator::WelchEstimator(WelchEstimator&&) noexcept = default;
WelchEstimator& WelchEstimator::operator=(WelchEstimator&&) noexcept = default;

void WelchEstimator::push(std::span<const double> samples) { impl_->push(samples); }

std::size_t WelchEstimator::segments() const { return impl_->segments; }

PowerSpectrum WelchEstimator::finish() const {
  const Impl& s = *impl_;
  if (s.segments == 0) throw SpectralError("no complete segment accumulated");
  const std::size_t n = s.settings.segment_length;
  const double fs = 1.0 / s.settings.sample_interval;
  PowerSpectrum out;
  out.resolution_bandwidth = fs / static_cast<double>(n);
  out.n_averages = s.segments;
  out.frequencies.resize(s.accum.size());
  out.psd.resize(s.accum.size());
  const double base = 1.0 / (fs * s.sum_w2 * static_cast<double>(s.segments));
  for (std::size_t k = 0; k < s.accum.size(); ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    out.frequencies[k] = static_cast<double>(k) * out.resolution_bandwidth;
    out.psd[k] = (edge ? 1.0 : 2.0) * base * s.accum[k];
  }
  out.noise_floor_estimate =
      out.psd.size() > 1 ? median(std::vector<double>(out.psd.begin() + 1, out.psd.end())) : 0.0;
  out.bin_correlation = spectral::bin_correlation(s.window);
  return out;
}

PowerSpectrum estimate_psd(std::span<const double> signal, double sample_interval,
                           std::size_t segment_length, double overlap, WindowKind window) {
  const WelchSettings settings{.sample_interval = sample_interval,
                               .segment_length = segment_length,
                               .overlap = overlap,
                               .window = window};
  settings.validate();
  if (signal.size() < 2 * segment_length) {
    throw SpectralError("input shorter than two segments");
  }
  double mean = 0.0;
  for (double x : signal) mean += x;
  mean /= static_cast<double>(signal.size());
  WelchEstimator est(settings, mean);
  est.push(signal);
  return est.finish();
}

PowerSpectrum estimate_psd(std::span<const std::uint32_t> counts, double bin_width,
                           std::size_t segment_length, double overlap, WindowKind window) {
  if (!(bin_width > 0.0)) throw SpectralError("bin width must be > 0");
  std::vector<double> rate(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) rate[i] = counts[i] / bin_width;
  return estimate_psd(std::span<const double>(rate), bin_width, segment_length, overlap, window);
}

PowerSpectrum spectrum_from_events(std::span<const double> event_times, double start,
                                   double duration, const WelchSettings& settings) {
  settings.validate();
  const double bw = settings.sample_interval;
  const std::size_t n_bins = photon::bin_total(duration, bw);
  if (n_bins < 2 * settings.segment_length) {
    throw SpectralError("record shorter than two segments");
  }
  std::vector<std::int64_t> index;
  index.reserve(event_times.size());
  std::size_t total = 0;
  for (double t : event_times) {
    const std::int64_t i = photon::bin_index(t, bw, start);
    index.push_back(i);
    if (i >= 0 && static_cast<std::size_t>(i) < n_bins) ++total;
  }
  const double mean = static_cast<double>(total) / (static_cast<double>(n_bins) * bw);

  WelchEstimator est(settings, mean);
  constexpr std::size_t kChunk = 1 << 16;
  std::vector<double> chunk;
  std::size_t e = 0;
  for (std::size_t b0 = 0; b0 < n_bins; b0 += kChunk) {
    const std::size_t b1 = std::min(n_bins, b0 + kChunk);
    chunk.assign(b1 - b0, 0.0);
    // Events are time-ordered, hence so are their bin indices.
    while (e < index.size() && index[e] < static_cast<std::int64_t>(b1)) {
      if (index[e] >= static_cast<std::int64_t>(b0)) {
        chunk[static_cast<std::size_t>(index[e]) - b0] += 1.0 / bw;
      }
      ++e;
    }
    est.push(chunk);
  }
  return est.finish();
}

double LorentzianFit::model(double f) const {
  const double u = 2.0 * (f - f0) / fwhm;
  return floor + amplitude / (1.0 + u * u);
}

namespace {

struct Params {
  double f0, hw, a, c;
};

double model_at(double f, const Params& p) {
  const double u = (f - p.f0) / p.hw;
  return p.c + p.a / (1.0 + u * u);
}

void jacobian(std::span<const double> f, const Params& p, Eigen::MatrixXd& j) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double u = (f[i] - p.f0) / p.hw;
    const double l = 1.0 / (1.0 + u * u);
    const auto r = static_cast<Eigen::Index>(i);
    j(r, 0) = p.a * 2.0 * u * l * l / p.hw;
    j(r, 1) = p.a * 2.0 * u * u * l * l / p.hw;
    j(r, 2) = l;
    j(r, 3) = 1.0;
  }
}

// Minimises |W r|^2 with W = L^-1 for a fixed lower Cholesky factor L
// (identity when null). Returns true on a relative step < 1e-8.
bool levenberg_marquardt(std::span<const double> f, std::span<const double> y,
                         const Eigen::LLT<Eigen::MatrixXd>* whitener, double scale_level,
                         Params& p, int& iterations) {
  const auto n = static_cast<Eigen::Index>(f.size());
  Eigen::MatrixXd j(n, 4);
  Eigen::VectorXd r(n);
  auto residuals = [&](const Params& q, Eigen::VectorXd& out) {
    for (Eigen::Index i = 0; i < n; ++i) out(i) = y[i] - model_at(f[i], q);
    if (whitener) whitener->matrixL().solveInPlace(out);
  };
  Eigen::VectorXd trial_r(n);
  residuals(p, r);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  for (; iterations < 200; ++iterations) {
    jacobian(f, p, j);
    if (whitener) whitener->matrixL().solveInPlace(j);
    const Eigen::Matrix4d h = j.transpose() * j;
    const Eigen::Vector4d g = j.transpose() * r;
    const double scales[4] = {p.hw, p.hw, scale_level, scale_level};
    auto relative = [&](const Eigen::Vector4d& step) {
      double rel = 0.0;
      for (int d = 0; d < 4; ++d) rel = std::max(rel, std::abs(step(d)) / scales[d]);
      return rel;
    };
    // Stop once the undamped Gauss-Newton step is negligible.
    const Eigen::Vector4d gn = h.ldlt().solve(g);
    if (gn.allFinite() && relative(gn) < 1e-8) return true;
    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::Matrix4d damped = h;
      for (int d = 0; d < 4; ++d) damped(d, d) += lambda * std::max(h(d, d), 1e-300);
      const Eigen::Vector4d step = damped.ldlt().solve(g);
      const Params trial{p.f0 + step(0), p.hw + step(1), p.a + step(2), p.c + step(3)};
      double trial_cost = INFINITY;
      if (trial.hw > 0.0) {
        residuals(trial, trial_r);
        trial_cost = trial_r.squaredNorm();
      }
      if (trial_cost <= cost) {
        p = trial;
        r = trial_r;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (relative(step) < 1e-8) {
          ++iterations;
          return true;
        }
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) return false;
  }
  return false;
}

// Periodogram noise covariance rho(|i-k|) m_i m_k for model values m.
Eigen::MatrixXd noise_covariance(const std::vector<double>& m,
                                 std::span<const double> correlation) {
  const auto n = static_cast<Eigen::Index>(m.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  const std::size_t lags = correlation.empty() ? 0 : correlation.size() - 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = std::max<Eigen::Index>(0, i - static_cast<Eigen::Index>(lags));
         k <= std::min(n - 1, i + static_cast<Eigen::Index>(lags)); ++k) {
      const auto lag = static_cast<std::size_t>(std::abs(i - k));
      const double rho = correlation.empty() ? 1.0 : correlation[lag];
      c(i, k) = rho * m[static_cast<std::size_t>(i)] * m[static_cast<std::size_t>(k)];
    }
  }
  return c;
}

}  // namespace

LorentzianFit fit_lorentzian(std::span<const double> f, std::span<const double> y,
                             std::span<const double> correlation) {
  const std::size_t n = f.size();
  if (n != y.size()) throw SpectralError("frequency and psd arrays differ in length");
  if (n < 20) throw SpectralError("fit window must contain at least 20 points");
  const double df = (f.back() - f.front()) / static_cast<double>(n - 1);
  if (!(df > 0.0)) throw SpectralError("fit frequencies must be increasing");

  // Initial guess: smoothed peak, median floor, half-maximum crossings.
  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= 2 ? i - 2 : 0;
    const std::size_t hi = std::min(n - 1, i + 2);
    double s = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) s += y[k];
    smooth[i] = s / static_cast<double>(hi - lo + 1);
  }
  const std::size_t ipk =
      static_cast<std::size_t>(std::max_element(smooth.begin(), smooth.end()) - smooth.begin());
  const double floor0 = median(std::vector<double>(y.begin(), y.end()));
  double a0 = smooth[ipk] - floor0;
  if (!(a0 > 0.0)) a0 = std::max(std::abs(floor0), 1e-300) * 1e-3;
  const double half = floor0 + 0.5 * a0;
  std::size_t left = ipk, right = ipk;
  while (left > 0 && smooth[left] > half) --left;
  while (right + 1 < n && smooth[right] > half) ++right;
  const double hw0 = std::max(df, 0.5 * static_cast<double>(right - left) * df);

  Params p{f[ipk], hw0, a0, floor0};
  const double scale_level = std::max(std::abs(a0) + std::abs(floor0), 1e-300);
  LorentzianFit fit;
  int iterations = 0;
  fit.converged = levenberg_marquardt(f, y, nullptr, scale_level, p, iterations);

  // Refine by generalised least squares: periodogram bins scatter in
  // proportion to their mean and are correlated through the window. The
  // weights come from the previous model, so a few rounds settle them.
  std::vector<double> m(n);
  auto evaluate = [&](const Params& q) {
    for (std::size_t i = 0; i < n; ++i) m[i] = model_at(f[i], q);
    return std::all_of(m.begin(), m.end(), [](double x) { return x > 0.0; });
  };
  bool weighted = false;
  std::optional<Eigen::LLT<Eigen::MatrixXd>> whitener;
  for (int round = 0; fit.converged && round < 4 && evaluate(p); ++round) {
    Eigen::LLT<Eigen::MatrixXd> llt(noise_covariance(m, correlation));
    if (llt.info() != Eigen::Success) break;
    Params q = p;
    int round_iterations = 0;
    if (!levenberg_marquardt(f, y, &llt, scale_level, q, round_iterations)) break;
    iterations += round_iterations;
    const double moved = std::abs(q.f0 - p.f0) / q.hw;
    p = q;
    whitener = std::move(llt);
    weighted = true;
    if (moved < 1e-6) break;
  }
  fit.iterations = iterations;

  fit.f0 = p.f0;
  fit.fwhm = 2.0 * p.hw;
  fit.amplitude = p.a;
  fit.floor = p.c;

  Eigen::MatrixXd j(static_cast<Eigen::Index>(n), 4);
  jacobian(f, p, j);
  Eigen::VectorXd r(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) r(static_cast<Eigen::Index>(i)) = y[i] - model_at(f[i], p);
  const double level = std::max(std::abs(p.c) + std::abs(p.a), 1e-300);
  fit.residual_norm = r.norm() / std::sqrt(static_cast<double>(n)) / level;
  if (weighted) {
    whitener->matrixL().solveInPlace(j);
    whitener->matrixL().solveInPlace(r);
  }
  // Covariance with the noise scale taken from the residuals.
  const double s2 = r.squaredNorm() / static_cast<double>(n - 4);
  const Eigen::Matrix4d h = j.transpose() * j;
  const Eigen::Matrix4d cov = h.completeOrthogonalDecomposition().pseudoInverse() * s2;
  fit.f0_uncertainty = std::sqrt(std::max(0.0, cov(0, 0)));
  fit.fwhm_uncertainty = 2.0 * std::sqrt(std::max(0.0, cov(1, 1)));
  fit.amplitude_uncertainty = std::sqrt(std::max(0.0, cov(2, 2)));
  fit.floor_uncertainty = std::sqrt(std::max(0.0, cov(3, 3)));

  // The centre is free, so noise alone always offers a bump to fit; 4 sigma
  // keeps the false-alarm rate on a floor-only window well below 1 %.
  const bool in_window = fit.f0 >= f.front() && fit.f0 <= f.back();
  fit.peak_found = fit.converged && in_window && fit.amplitude > 0.0 &&
                   fit.amplitude > 4.0 * fit.amplitude_uncertainty;
  return fit;
}

LorentzianFit fit_lorentzian(const PowerSpectrum& spectrum, double f_lo, double f_hi) {
  const auto lo = std::lower_bound(spectrum.frequencies.begin(), spectrum.frequencies.end(), f_lo);
  const auto hi = std::upper_bound(spectrum.frequencies.begin(), spectrum.frequencies.end(), f_hi);
  const auto i0 = static_cast<std::size_t>(lo - spectrum.frequencies.begin());
  const auto i1 = static_cast<std::size_t>(hi - spectrum.frequencies.begin());
  if (i1 <= i0 || i1 - i0 < 20) throw SpectralError("fit window must contain at least 20 points");
  return fit_lorentzian(std::span<const double>(spectrum.frequencies).subspan(i0, i1 - i0),
                        std::span<const double>(spectrum.psd).subspan(i0, i1 - i0),
                        spectrum.bin_correlation);
}

double snr_db(const LorentzianFit& fit) {
  if (!fit.converged) throw SpectralError("snr_db needs a converged fit");
  if (!(fit.floor > 0.0)) throw SpectralError("snr_db needs a positive noise floor");
  return 10.0 * std::log10((fit.floor + fit.amplitude) / fit.floor);
}

}  // namespace ionmirror::spectral
