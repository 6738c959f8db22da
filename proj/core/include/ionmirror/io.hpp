#pragma once

// Data products: CSV/JSON serialisation of records, scans, spectra and the
// run manifest, written atomically (temp file + rename).

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "ionmirror/config.hpp"
#include "ionmirror/dynamics.hpp"
#include "ionmirror/protocol.hpp"
#include "ionmirror/spectral.hpp"

namespace ionmirror::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Format { csv, json };

Format parse_format(const std::string& name);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

/// Columns: index, slope, scan_value, f0_hz, fwhm_hz, f0_sigma_hz, snr_db,
/// mean_rate_cps, excluded, reason.
std::string records_table(std::span<const protocol::MeasurementRecord> records, Format format);

/// Columns: x_value, shift_hz, shift_sigma_hz, scan_value, excluded.
std::string scan_table(const protocol::ScanResult& scan, Format format);

/// Columns: z_nm, decay_rate_hz, level_shift_hz.
std::string reference_table(const protocol::ReferenceCurves& curves, Format format);

/// Columns: frequency_hz, psd. Only bins in [f_lo, f_hi].
std::string spectrum_table(const spectral::PowerSpectrum& spectrum, double f_lo, double f_hi,
                           Format format);

/// {f0_hz, fwhm_hz, amplitude, floor, f0_sigma_hz, snr_db, converged, peak_found}.
std::string fit_json(const spectral::LorentzianFit& fit);

std::string shift_json(const protocol::ShiftEstimate& estimate);

/// Columns: time_s, q_m, v_m_per_s, mirror_path_m.
std::string trajectory_table(const dynamics::Trajectory& trajectory, Format format);

/// Sparse count series: header lines "# bin_width_s=..." and "# n_bins=...",
/// then columns bin, counts for the nonzero bins only.
std::string counts_table(std::span<const std::uint32_t> counts, double bin_width, Format format);

struct CountSeries {
  std::vector<std::uint32_t> counts;
  double bin_width = 0.0;
};

/// Reads either form written by counts_table back into a dense series.
CountSeries parse_counts(const std::string& text);

/// Columns: time_s, mirror_displacement_m, distance_offset_m, smoothed_rate, error_signal, saturated.
std::string telemetry_table(std::span<const servo::TelemetrySample> telemetry, Format format,
                            std::size_t stride = 1);

/// Model predictions as a two-column table (quantity, value).
std::string predictions_table(const model::Predictions& p, Format format);

/// Manifest with the fixed top-level keys config, seed, predictions,
/// versions, timestamps. Timestamps are simulated-time quantities only, so
/// the manifest is reproducible. `extra` (a JSON object text, may be empty)
/// is merged under "results".
std::string manifest_json(const config::RunConfig& cfg, std::uint64_t seed,
                          const std::string& command, double simulated_seconds,
                          const std::string& extra = {});

}  // namespace ionmirror::io
