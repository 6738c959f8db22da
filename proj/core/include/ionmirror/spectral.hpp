#pragma once

// Spectrum-analyser emulation for photon-count signals: Welch-averaged
// one-sided power spectral density and a Lorentzian line fit.
//
// PSD convention: the input counts c_i in bins of width dt are converted to
// a rate signal x_i = c_i / dt (counts/s), the mean is removed, and the PSD is
// one-sided in (counts/s)^2 / Hz, normalised so that sum(psd) * df equals the
// window-weighted mean square of x. Shot noise at mean rate r therefore sits
// at a flat 2 r (the Schottky level).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionmirror::spectral {

class SpectralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class WindowKind { rectangular, hann };

WindowKind parse_window(const std::string& name);
const char* window_name(WindowKind kind);

/// Periodic window of length n.
std::vector<double> make_window(WindowKind kind, std::size_t n);

/// Squared correlation coefficients between periodogram bins k and k+j of a
/// stationary white input, for j = 0..max_lag.
std::vector<double> bin_correlation(std::span<const double> window, std::size_t max_lag = 4);

struct PowerSpectrum {
  std::vector<double> frequencies;  // Hz, uniform spacing starting at 0
  std::vector<double> psd;          // (counts/s)^2 / Hz
  double resolution_bandwidth = 0.0;  // Hz, bin spacing
  std::size_t n_averages = 0;
  double noise_floor_estimate = 0.0;  // median psd over non-DC bins
  std::vector<double> bin_correlation;  // see spectral::bin_correlation

  /// Sum of psd * df.
  double integrated_power() const;
};

struct WelchSettings {
  double sample_interval = 1e-7;   // s
  std::size_t segment_length = 0;  // samples
  double overlap = 0.5;            // fraction in [0, 0.9]
  WindowKind window = WindowKind::hann;

  void validate() const;
  double resolution_bandwidth() const {
    return 1.0 / (sample_interval * static_cast<double>(segment_length));
  }
  std::size_t hop() const;
};

/// Segment length giving the requested resolution bandwidth.
std::size_t segment_length_for(double resolution_bandwidth_hz, double sample_interval);

/// Streaming Welch estimator. Samples are pushed in arbitrary chunks; each
/// completed segment is mean-removed (with the caller-supplied mean),
/// windowed, transformed and accumulated.
class WelchEstimator {
 public:
  WelchEstimator(WelchSettings settings, double mean);
  ~WelchEstimator();
  WelchEstimator(const WelchEstimator&) = delete;
  WelchEstimator& operator=(const WelchEstimator&) = delete;
  WelchEstimator(WelchEstimator&&) noexcept;
  WelchEstimator& operator=(WelchEstimator&&) noexcept;

  void push(std::span<const double> samples);
  std::size_t segments() const;

  /// Throws SpectralError if no complete segment was accumulated.
  PowerSpectrum finish() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Welch PSD of a binned count series. Errors: fewer than 2 segments of
/// data, overlap outside [0, 0.9].
PowerSpectrum estimate_psd(std::span<const std::uint32_t> counts, double bin_width,
                           std::size_t segment_length, double overlap, WindowKind window);

/// Same for a real-valued rate signal (counts/s) sampled at `sample_interval`.
PowerSpectrum estimate_psd(std::span<const double> signal, double sample_interval,
                           std::size_t segment_length, double overlap, WindowKind window);

/// Bins the event stream on the fly (never materialising the full count
/// series) and returns its Welch PSD; identical to bin_counts + estimate_psd.
PowerSpectrum spectrum_from_events(std::span<const double> event_times, double start,
                                   double duration, const WelchSettings& settings);

struct LorentzianFit {
  double f0 = 0.0;          // Hz
  double fwhm = 0.0;        // Hz
  double amplitude = 0.0;   // psd units
  double floor = 0.0;       // psd units
  double f0_uncertainty = 0.0;
  double fwhm_uncertainty = 0.0;
  double amplitude_uncertainty = 0.0;
  double floor_uncertainty = 0.0;
  bool converged = false;
  bool peak_found = false;
  double residual_norm = 0.0;  // rms relative residual
  int iterations = 0;

  double model(double f) const;
};

/// Least-squares fit of floor + A / (1 + ((f - f0)/(fwhm/2))^2)
/// over the bins with f_lo <= f <= f_hi, by damped Gauss-Newton
/// (Levenberg-Marquardt), then refined by generalised least squares with
/// the periodogram noise covariance rho(|i-k|) m_i m_k of the current model.
/// Throws SpectralError with fewer than 20 bins.
LorentzianFit fit_lorentzian(const PowerSpectrum& spectrum, double f_lo, double f_hi);

/// Lorentzian fit on explicit (f, y) samples; `correlation` as in
/// PowerSpectrum::bin_correlation (empty = independent bins).
LorentzianFit fit_lorentzian(std::span<const double> f, std::span<const double> y,
                             std::span<const double> correlation = {});

/// 10 log10((floor + amplitude) / floor). Throws if the fit did not
/// converge or floor <= 0.
double snr_db(const LorentzianFit& fit);

}  // namespace ionmirror::spectral
