#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "ionmirror/photon.hpp"
#include "ionmirror/rng.hpp"
#include "ionmirror/spectral.hpp"
#include "synth.hpp"

using namespace ionmirror;
using namespace ionmirror::spectral;

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

const std::vector<double> kHannRho{1.0, 4.0 / 9.0, 1.0 / 36.0};

}  // namespace

TEST(Window, HannCorrelation) {
  const auto w = make_window(WindowKind::hann, 1024);
  const auto rho = bin_correlation(w, 3);
  ASSERT_EQ(rho.size(), 4u);
  EXPECT_NEAR(rho[0], 1.0, 1e-12);
  EXPECT_NEAR(rho[1], 4.0 / 9.0, 1e-9);
  EXPECT_NEAR(rho[2], 1.0 / 36.0, 1e-9);
  EXPECT_NEAR(rho[3], 0.0, 1e-9);
  const auto flat = bin_correlation(make_window(WindowKind::rectangular, 64), 2);
  EXPECT_NEAR(flat[1], 0.0, 1e-12);
}

TEST(Window, ParseNames) {
  EXPECT_EQ(parse_window("hann"), WindowKind::hann);
  EXPECT_EQ(parse_window("rectangular"), WindowKind::rectangular);
  EXPECT_THROW(parse_window("kaiser"), SpectralError);
}

TEST(Psd, ParsevalRectangularExact) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(3.0, 2.0);
  const std::size_t seg = 256, nseg = 64;
  std::vector<double> x(seg * nseg);
  for (auto& v : x) v = g(rng);
  const auto ps = estimate_psd(x, 1e-3, seg, 0.0, WindowKind::rectangular);
  const double m = mean_of(x);
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= static_cast<double>(x.size());
  EXPECT_NEAR(ps.integrated_power(), var, 1e-9 * var);
}

TEST(Psd, ParsevalHannStatistical) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.5);
  std::vector<double> x(1 << 25);
  for (auto& v : x) v = g(rng);
  const auto ps = estimate_psd(x, 1e-6, 4096, 0.5, WindowKind::hann);
  double var = 0.0;
  for (double v : x) var += v * v;
  var /= static_cast<double>(x.size());
  EXPECT_NEAR(ps.integrated_power() / var, 1.0, 1e-3);
}

TEST(Psd, SinusoidPowerIsHalfSquareAmplitude) {
  const double dt = 1e-4, a = 3.0;
  const std::size_t seg = 1000;
  const double f = 37.0 / (seg * dt);  // exactly on bin 37
  std::vector<double> x(seg * 20);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = a * std::sin(2 * M_PI * f * i * dt);
  for (auto win : {WindowKind::hann, WindowKind::rectangular}) {
    const auto ps = estimate_psd(x, dt, seg, 0.5, win);
    double p = 0.0;
    for (std::size_t k = 33; k <= 41; ++k) p += ps.psd[k] * ps.resolution_bandwidth;
    EXPECT_NEAR(p, a * a / 2, 1e-3 * a * a / 2) << window_name(win);
    EXPECT_NEAR(ps.frequencies[37], f, 1e-9);
  }
}

TEST(Psd, ConstantSignalGivesZero) {
  std::vector<double> x(4096, 7.5);
  const auto ps = estimate_psd(x, 1e-3, 512, 0.5, WindowKind::hann);
  for (double v : ps.psd) EXPECT_NEAR(v, 0.0, 1e-20);
}

TEST(Psd, AxisAndBandwidth) {
  std::vector<double> x(8192, 0.0);
  const auto ps = estimate_psd(x, 1e-3, 1000, 0.5, WindowKind::hann);
  EXPECT_DOUBLE_EQ(ps.resolution_bandwidth, 1.0);
  EXPECT_EQ(ps.frequencies.size(), 501u);
  EXPECT_EQ(ps.frequencies[0], 0.0);
  EXPECT_NEAR(ps.frequencies.back(), 500.0, 1e-9);
  EXPECT_EQ(ps.n_averages, 15u);
  EXPECT_EQ(segment_length_for(50.0, 1e-7), 200000u);
}

TEST(Psd, Errors) {
  std::vector<double> x(1000, 0.0);
  EXPECT_THROW(estimate_psd(x, 1e-3, 600, 0.0, WindowKind::hann), SpectralError);
  EXPECT_THROW(estimate_psd(x, 1e-3, 100, 0.95, WindowKind::hann), SpectralError);
  EXPECT_THROW(estimate_psd(x, 1e-3, 100, -0.1, WindowKind::hann), SpectralError);
  EXPECT_THROW(estimate_psd(x, 0.0, 100, 0.5, WindowKind::hann), SpectralError);
}

TEST(Psd, ShotNoiseFloorIsTwiceRate) {
  const double r = 5e4, bin = 1e-6, duration = 4.0;
  Engine rng = make_stream(21, 0);
  const auto ev = photon::emit_photons([r](double) { return r; }, 0.0, duration, r, rng);
  WelchSettings ws;
  ws.sample_interval = bin;
  ws.segment_length = segment_length_for(100.0, bin);
  const auto ps = spectrum_from_events(ev, 0.0, duration, ws);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < ps.frequencies.size(); ++k) {
    if (ps.frequencies[k] >= 1e3 && ps.frequencies[k] <= 4e5) {
      s += ps.psd[k];
      ++n;
    }
  }
  const double measured_rate = static_cast<double>(ev.size()) / duration;
  // Binning at 1 us rolls off as sinc^2 above ~100 kHz; below 400 kHz the loss is < 6%.
  EXPECT_NEAR(s / static_cast<double>(n) / (2 * measured_rate), 1.0, 0.03);
  EXPECT_NEAR(ps.noise_floor_estimate / (2 * measured_rate), 1.0, 0.15);
}

TEST(Psd, StreamingMatchesBinnedSeries) {
  const double bin = 1e-5, duration = 0.5;
  Engine rng = make_stream(22, 0);
  const auto ev = photon::emit_photons(
      [](double t) { return 2e4 * (1 + 0.5 * std::sin(2 * M_PI * 800 * t)); }, 0.0, duration,
      3e4, rng);
  WelchSettings ws;
  ws.sample_interval = bin;
  ws.segment_length = 2000;
  ws.overlap = 0.5;
  const auto a = spectrum_from_events(ev, 0.0, duration, ws);
  const auto counts = photon::bin_counts(ev, bin, duration);
  const auto b = estimate_psd(counts, bin, ws.segment_length, ws.overlap, ws.window);
  ASSERT_EQ(a.psd.size(), b.psd.size());
  EXPECT_EQ(a.n_averages, b.n_averages);
  for (std::size_t k = 0; k < a.psd.size(); ++k) {
    EXPECT_NEAR(a.psd[k], b.psd[k], 1e-9 * (1 + std::abs(b.psd[k])));
  }
}

TEST(Fit, NoiselessLorentzianRecovered) {
  std::vector<double> f, y;
  const auto m = synth::lorentzian(1.0203e6, 480.0, 3.1e4, 1.4e4);
  for (double x = 1.0173e6; x <= 1.0233e6; x += 50.0) {
    f.push_back(x);
    y.push_back(m(x));
  }
  const auto fit = fit_lorentzian(f, y);
  ASSERT_TRUE(fit.converged);
  EXPECT_TRUE(fit.peak_found);
  EXPECT_NEAR(fit.f0, 1.0203e6, 1e-6 * 480.0);
  EXPECT_NEAR(fit.fwhm / 480.0, 1.0, 1e-6);
  EXPECT_NEAR(fit.amplitude / 3.1e4, 1.0, 1e-6);
  EXPECT_NEAR(fit.floor / 1.4e4, 1.0, 1e-6);
  EXPECT_NEAR(fit.model(1.0203e6 + 240.0), 1.4e4 + 1.55e4, 1e-2);
}

TEST(Psd, ToneOnExactBinIsSymmetric) {
  const double dt = 1e-7;
  const std::size_t seg = 200000;  // 50 Hz bins
  const std::size_t bin = 20400;   // 1.02 MHz
  const double f = bin * 50.0;
  std::vector<double> x(seg * 8);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * M_PI * f * i * dt + 0.3);
  const auto ps = estimate_psd(x, dt, seg, 0.5, WindowKind::hann);
  ASSERT_GT(ps.frequencies.size(), bin + 3);
  EXPECT_NEAR(ps.frequencies[bin], f, 1e-6);
  const auto peak = std::max_element(ps.psd.begin(), ps.psd.end()) - ps.psd.begin();
  EXPECT_EQ(static_cast<std::size_t>(peak), bin);
  // Hann leakage: neighbours at 1/4 of the peak, equal on both sides.
  EXPECT_NEAR(ps.psd[bin - 1] / ps.psd[bin], 0.25, 1e-9);
  EXPECT_NEAR(ps.psd[bin + 1] / ps.psd[bin], 0.25, 1e-9);
  EXPECT_LT(ps.psd[bin + 3], 1e-12 * ps.psd[bin]);
}

TEST(Fit, FloorOnlyNotAPeak) {
  std::mt19937_64 rng(31);
  int found = 0;
  for (int t = 0; t < 20; ++t) {
    const auto s = synth::hann_periodogram([](double) { return 1e4; }, 1.017e6, 1.023e6, 50.0,
                                           100, rng);
    const auto fit = fit_lorentzian(s.f, s.y, kHannRho);
    if (fit.peak_found) ++found;
  }
  EXPECT_EQ(found, 0);
  std::vector<double> f, y;
  for (int i = 0; i < 50; ++i) {
    f.push_back(i);
    y.push_back(5.0);
  }
  EXPECT_FALSE(fit_lorentzian(f, y).peak_found);
}

TEST(Fit, TooFewBinsThrows) {
  std::vector<double> f(10), y(10, 1.0);
  std::iota(f.begin(), f.end(), 0.0);
  EXPECT_THROW(fit_lorentzian(f, y), SpectralError);
  std::vector<double> y2(11, 1.0);
  std::vector<double> f2(11);
  EXPECT_THROW(fit_lorentzian(f2, y), SpectralError);
}

TEST(Snr, Examples) {
  LorentzianFit fit;
  fit.converged = true;
  fit.floor = 1.0;
  fit.amplitude = 1.0;
  EXPECT_NEAR(snr_db(fit), 3.0103, 1e-4);
  fit.amplitude = 9.0;
  EXPECT_NEAR(snr_db(fit), 10.0, 1e-12);
  fit.floor = 0.0;
  EXPECT_THROW(snr_db(fit), SpectralError);
  fit.floor = 1.0;
  fit.converged = false;
  EXPECT_THROW(snr_db(fit), SpectralError);
}

// Sideband-like line: 500 Hz wide, 50 Hz bins, +-3 kHz window.
struct LineCase {
  double f0 = 1.0201234e6;
  double fwhm = 500.0;
  double floor = 1.4e4;
  double snr_db = 5.0;
  double amplitude() const { return floor * (std::pow(10.0, snr_db / 10.0) - 1.0); }
};

std::vector<LorentzianFit> fit_trials(const LineCase& c, int n_avg, int trials, unsigned seed) {
  std::mt19937_64 rng(seed);
  const auto m = synth::lorentzian(c.f0, c.fwhm, c.amplitude(), c.floor);
  std::vector<LorentzianFit> out;
  for (int t = 0; t < trials; ++t) {
    const auto s = synth::hann_periodogram(m, c.f0 - 3010.0, c.f0 + 2990.0, 50.0, n_avg, rng);
    out.push_back(fit_lorentzian(s.f, s.y, kHannRho));
  }
  return out;
}

TEST(FitStatistics, CentreUnbiased) {
  LineCase c;
  const auto fits = fit_trials(c, 100, 500, 41);
  std::vector<double> err;
  for (const auto& fit : fits) {
    if (fit.converged) err.push_back(fit.f0 - c.f0);
  }
  ASSERT_GE(err.size(), 490u);
  const double se = sd_of(err) / std::sqrt(static_cast<double>(err.size()));
  EXPECT_LT(std::abs(mean_of(err)), 3 * se) << "mean " << mean_of(err) << " se " << se;
}

TEST(FitStatistics, UncertaintyCalibrated) {
  LineCase c;
  c.snr_db = 8.0;
  const auto fits = fit_trials(c, 100, 400, 42);
  std::vector<double> err, quoted;
  for (const auto& fit : fits) {
    if (!fit.peak_found) continue;
    err.push_back(fit.f0 - c.f0);
    quoted.push_back(fit.f0_uncertainty);
  }
  ASSERT_GE(err.size(), 390u);
  std::sort(quoted.begin(), quoted.end());
  const double median_quoted = quoted[quoted.size() / 2];
  EXPECT_NEAR(median_quoted / sd_of(err), 1.0, 0.3) << sd_of(err);
}

TEST(FitStatistics, WeakLineStillDetected) {
  LineCase c;
  c.snr_db = 2.0;
  int found = 0;
  for (const auto& fit : fit_trials(c, 100, 100, 45)) found += fit.peak_found;
  EXPECT_GE(found, 95);
}

TEST(FitStatistics, ScatterFallsAsRootAverages) {
  LineCase c;
  c.snr_db = 10.0;
  std::vector<double> sd;
  for (int n : {16, 64, 256}) {
    std::vector<double> err;
    for (const auto& fit : fit_trials(c, n, 300, 43 + n)) {
      if (fit.converged) err.push_back(fit.f0 - c.f0);
    }
    ASSERT_GE(err.size(), 270u) << n;
    sd.push_back(sd_of(err));
  }
  EXPECT_GT(sd[0], sd[1]);
  EXPECT_GT(sd[1], sd[2]);
  EXPECT_NEAR(sd[0] / sd[1], 2.0, 0.4);
  EXPECT_NEAR(sd[1] / sd[2], 2.0, 0.4);
}

TEST(FitStatistics, FiveDbLineLocatedWithinTenHertz) {
  LineCase c;  // 5 dB
  // 1200 Hann averages of 50 Hz bins, about 12.7 s of data at 50 % overlap.
  const auto fits = fit_trials(c, 1200, 200, 44);
  int good = 0;
  for (const auto& fit : fits) {
    if (fit.peak_found && std::abs(fit.f0 - c.f0) < 10.0) ++good;
  }
  EXPECT_GE(good, 180);
}
