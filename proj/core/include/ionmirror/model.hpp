#pragma once

// Closed-form description of a laser-excited ion in front of a distant
// retro-reflecting mirror: excited-state level shift, the resulting force,
// the modified trap frequency and decay rate, and the derived scalars.
//
// Conventions:
//   * z is the mirror position relative to the ion; the detected fringe
//     follows -cos(2kz), so the midpoint of the positive slope has
//     sin(2kz) = +1.
//   * all frequencies are angular (rad/s) unless a function name says Hz.

#include <stdexcept>
#include <string>
#include <vector>

#include "ionmirror/units.hpp"

namespace ionmirror::model {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the mirror term overwhelms the trap and the curvature turns
/// negative (no real oscillation frequency).
class ImaginaryFrequencyError : public ModelError {
 public:
  using ModelError::ModelError;
};

struct IonSpecies {
  double mass_kg;
  double decay_rate;     // Gamma, 1/s
  double wavelength_m;

  double wavenumber() const { return constants::two_pi / wavelength_m; }
  void validate() const;

  /// 138Ba+ on the 493 nm S-P line, Gamma = 2 pi x 15.4 MHz.
  static IonSpecies barium138();
};

struct MirrorCoupling {
  double epsilon;                  // retro-reflected fraction of fluorescence
  double nominal_distance_m = 0.25;

  void validate() const;
};

struct TrapConfig {
  double omega_trap;     // rad/s
  double mode_angle_rad; // between observed mode and optical axis

  void validate() const;
  double projection() const;
};

/// Two-level steady-state excited population.
double excited_population(double saturation, double detuning, double decay_rate);

struct Excitation {
  double p_e;

  static Excitation from_saturation(double saturation, double detuning,
                                    double decay_rate);
  void validate() const;
};

struct IonMirrorSystem {
  IonSpecies ion;
  MirrorCoupling mirror;
  TrapConfig trap;
  Excitation excitation;

  /// Throws ModelError on a violated invariant; returns non-fatal warnings.
  std::vector<std::string> validate() const;

  /// 138Ba+, epsilon = 1.5 %, omega_x = 2 pi x 1.02 MHz at 54 deg, P_e = 7 %.
  static IonMirrorSystem typical();
};

/// Above this ratio omega_vac / omega_trap the linearised shift is flagged.
inline constexpr double kLinearisationWarnRatio = 0.1;

/// Excited-level energy shift U(z) = -hbar eps Gamma / 2 sin(2kz), in J.
double mirror_potential(double z, const IonMirrorSystem& sys);

/// Population-weighted force -P_e dU/dz along the optical axis, in N.
double mirror_force(double z, const IonMirrorSystem& sys);

/// Oscillation frequency of a free atom in one well of P_e U(z).
double vacuum_frequency(const IonMirrorSystem& sys);

/// sqrt(omega_trap^2 + omega_vac^2 sin 2kz); throws ImaginaryFrequencyError
/// when the radicand is not positive.
double modified_trap_frequency(double z, const IonMirrorSystem& sys);

/// Linearised shift P_e eps Gamma hbar k^2 / (m omega_trap) sin(2kz).
double trap_frequency_shift(double z, const IonMirrorSystem& sys);

/// Gamma (1 - eps cos 2kz).
double modified_decay_rate(double z, const IonMirrorSystem& sys);

/// hbar k^2 / (2m) expressed in Hz.
double recoil_frequency(const IonSpecies& ion);

/// P_e hbar k eps Gamma / m, in m/s^2.
double max_acceleration(const IonMirrorSystem& sys);

/// Mirror positions of the fringe-slope midpoints nearest z = 0.
double positive_slope_midpoint(const IonSpecies& ion);
double negative_slope_midpoint(const IonSpecies& ion);

/// Slope-to-slope (peak-to-peak) trap-frequency difference in Hz:
/// 2 * shift(sin = +1) / 2 pi, optionally scaled by projection^2 for a mode
/// inclined to the optical axis.
double peak_to_peak_shift_hz(const IonMirrorSystem& sys, double projection = 1.0);

/// All scalar predictions in reporting units, for the CLI and manifests.
struct Predictions {
  double vacuum_frequency_hz;
  double shift_amplitude_hz;      // delta f at sin(2kz) = +1
  double peak_to_peak_shift_hz;
  double exact_shift_hz;          // omega'(+1) - omega_trap, in Hz
  double recoil_frequency_hz;
  double max_force_n;
  double max_acceleration_mps2;
  double max_acceleration_g;
  double level_shift_amplitude_hz;  // eps Gamma / 2 / 2pi
  double projection;                // factor applied to the two shift entries
};

Predictions predict(const IonMirrorSystem& sys, double projection = 1.0);

}  // namespace ionmirror::model
