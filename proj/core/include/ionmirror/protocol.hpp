#pragma once

// Measurement protocols on the simulated apparatus: alternating-slope shift
// measurement, excitation (count-rate) scan and spatial scan, with the
// drift-robust shift estimator and the figure-level fits.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionmirror/dynamics.hpp"
#include "ionmirror/model.hpp"
#include "ionmirror/servo.hpp"
#include "ionmirror/spectral.hpp"

namespace ionmirror::protocol {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { alternating_slope, pe_scan, spatial_scan };

ExperimentKind parse_kind(const std::string& name);
const char* kind_name(ExperimentKind kind);

struct SpectrumSettings {
  double resolution_bandwidth_hz = 50.0;
  double overlap = 0.5;
  spectral::WindowKind window = spectral::WindowKind::hann;
  double fit_half_width_hz = 3000.0;  // fit window around the nominal trap frequency
};

/// Laser-cooling calibration: the sideband FWHM and its SNR at a reference
/// count rate fix (cooling_rate, diffusion) through dynamics::calibrate_cooling.
struct CoolingTarget {
  bool calibrate = true;
  double fwhm_hz = 500.0;
  double snr_db = 2.3;
  double reference_rate = 7e3;  // counts/s, P_e = 0.07 under the 1e4 cps / 0.1 calibration
};

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::alternating_slope;
  std::size_t n_spectra = 60;
  double spectrum_duration = 5.0;  // s
  model::IonMirrorSystem system = model::IonMirrorSystem::typical();
  dynamics::SimParams sim;
  servo::ServoConfig servo;         // gain <= 0 selects servo::nominal_gain
  servo::DriftConfig drift;         // ion-mirror distance drift
  double trap_drift_hz_per_record = 0.0;  // slow drift of the bare trap frequency
  std::vector<double> scan_points;  // P_e values or setpoint offsets in (-1, 1)
  int fringe_orders = 1;            // spatial scan: fringes covered
  std::uint64_t master_seed = 1;
  double settle_integration_times = 5.0;
  double max_excluded_fraction = 0.25;
  SpectrumSettings spectrum;
  CoolingTarget cooling;

  /// Throws ProtocolError naming the offending field.
  void validate() const;
};

/// Plan with calibrated cooling and the servo gain resolved, as executed.
ExperimentPlan resolve_plan(ExperimentPlan plan);

struct MeasurementRecord {
  std::size_t index = 0;
  double wall_time_s = 0.0;       // simulated experiment clock at record start
  int slope = +1;
  double scan_value = 0.0;        // P_e or setpoint offset; 0 for alternating runs
  double mirror_position_m = 0.0; // inferred lock position
  double mean_rate = 0.0;         // detected counts/s over the record
  spectral::LorentzianFit fit;
  double snr_db = 0.0;
  bool excluded = false;
  std::string exclusion_reason;
};

struct ShiftEstimate {
  double shift_hz = 0.0;
  double uncertainty_hz = 0.0;
  std::size_t n_pairs = 0;
  std::vector<double> per_pair_values;
};

/// Three-point estimator on a slope-alternating record sequence. For each
/// interior record i whose neighbours are included,
///   pair_i = slope_i * (f0_i - (f0_{i-1} + f0_{i+1}) / 2),
/// which equals the slope-to-slope difference s exactly for
/// f0 = base + a t + slope s / 2. shift = mean(pair); the uncertainty is the
/// standard error corrected for the lag-1 and lag-2 correlation that
/// overlapping triples induce (2/3 and 1/6 for independent f0 errors).
/// Errors: fewer than 3 records, non-alternating slopes, no usable triple.
ShiftEstimate estimate_shift(std::span<const MeasurementRecord> records);

struct AlternatingResult {
  std::vector<MeasurementRecord> records;
  ShiftEstimate estimate;
  std::size_t n_excluded = 0;
};

AlternatingResult run_alternating_slope(const ExperimentPlan& plan);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_sigma = 0.0;
  double intercept_sigma = 0.0;
  double chi2 = 0.0;
  std::size_t dof = 0;
};

/// Weighted least squares y = intercept + slope x with weights 1/sigma^2;
/// parameter uncertainties from the covariance (not rescaled by chi2).
LinearFit fit_line(std::span<const double> x, std::span<const double> y,
                   std::span<const double> sigma);

struct SinusoidFit {
  double amplitude = 0.0;
  double period = 0.0;   // m
  double phase = 0.0;    // rad, y = amplitude sin(2 pi z / period + phase) + offset
  double offset = 0.0;
  double amplitude_sigma = 0.0;
  double period_sigma = 0.0;
  double phase_sigma = 0.0;
  double offset_sigma = 0.0;
  double chi2 = 0.0;
  std::size_t dof = 0;
  bool converged = false;

  double operator()(double z) const;
  /// Position of a maximum, in [0, period).
  double maximum_position() const;
};

/// Weighted nonlinear fit with the period free, started from
/// `period_guess`; amplitude is returned >= 0.
SinusoidFit fit_sinusoid(std::span<const double> z, std::span<const double> y,
                         std::span<const double> sigma, double period_guess);

struct ReferenceCurves {
  std::vector<double> z_m;
  std::vector<double> decay_rate_hz;   // modified decay rate / 2 pi
  std::vector<double> level_shift_hz;  // U / h
};

ReferenceCurves reference_curves(const model::IonMirrorSystem& sys, double z_min, double z_max,
                                 std::size_t n);

struct ScanPoint {
  double x = 0.0;        // mean count rate (pe scan) or mirror position in m (spatial)
  double scan_value = 0.0;
  double shift_hz = 0.0;
  double shift_sigma_hz = 0.0;
  bool excluded = false;
};

struct ScanResult {
  std::vector<ScanPoint> points;
  std::vector<MeasurementRecord> records;
  std::optional<LinearFit> linear;
  std::optional<SinusoidFit> sinusoid;
  /// Spatial scan: distance from the fitted maximum to the nearest
  /// positive-slope midpoint, as a fraction of the fitted period.
  double extremum_offset_fraction = 0.0;
  std::optional<ReferenceCurves> reference;
  std::size_t n_excluded = 0;
};

/// For each P_e in scan_points, an alternating-slope run of n_spectra;
/// x is the measured mean count rate, y the estimated shift.
ScanResult run_pe_scan(const ExperimentPlan& plan);

/// For each fringe order, slope and setpoint offset o in scan_points, lock at
/// rate R0 (1 + o V) and record the sideband frequency. x is the mirror
/// position inferred from setpoint and fringe model; y is f0 minus the bare
/// trap frequency.
ScanResult run_spatial_scan(const ExperimentPlan& plan);

/// Seed of stream `index` derived from `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Detection efficiency giving `rate` counts/s at the slope midpoint for
/// excited population `p_e`.
double detection_efficiency_for(double rate, double p_e, const model::IonSpecies& ion);

}  // namespace ionmirror::protocol
