#pragma once

// INI run configuration. Sections mirror the modules; every physical key
// carries its unit in the name (wavelength_nm, frequency_mhz, ...).

#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionmirror/protocol.hpp"
#include "ionmirror/servo.hpp"

namespace ionmirror::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LockSettings {
  double duration_s = 100.0;
  double initial_offset_m = 0.0;  // 0 selects the positive-slope midpoint
  double quality_window_s = 100.0;
};

struct RunConfig {
  protocol::ExperimentPlan plan;
  std::vector<double> pe_points{0.02, 0.045, 0.07, 0.095, 0.12};
  std::vector<double> setpoint_offsets{-0.5, 0.5};
  double calibration_rate_cps = 1e4;
  double calibration_pe = 0.1;
  bool detection_efficiency_explicit = false;
  double saturation = -1.0;  // >= 0: P_e from (saturation, detuning)
  double detuning_mhz = 0.0; // laser detuning / 2 pi
  LockSettings lock;

  /// Fills derived fields (detection efficiency from the count-rate
  /// calibration) and checks the configuration; throws ConfigError.
  void finalize();
  /// Plan for `kind` with the matching scan points.
  protocol::ExperimentPlan plan_for(protocol::ExperimentKind kind) const;
};

/// Built-in parameter set: the experiment's typical values.
RunConfig defaults();

/// Reads an INI file over the defaults. Unknown sections or keys, malformed
/// numbers and out-of-range values raise ConfigError naming the key.
RunConfig load(const std::string& path);
RunConfig parse(std::istream& in, const std::string& source = "<input>");

/// Resolved configuration as INI text (round-trips through parse).
std::string to_ini(const RunConfig& cfg);

/// Every accepted "section.key".
std::vector<std::string> known_keys();

}  // namespace ionmirror::config
