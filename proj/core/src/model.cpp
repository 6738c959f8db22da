#include "ionmirror/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ionmirror::model {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ModelError(what);
}

double sin2kz(double z, const IonSpecies& ion) { return std::sin(2.0 * ion.wavenumber() * z); }
double cos2kz(double z, const IonSpecies& ion) { return std::cos(2.0 * ion.wavenumber() * z); }

// P_e eps Gamma hbar k^2 / m, the curvature scale shared by omega_vac and the shift.
double curvature_rate(const IonMirrorSystem& sys) {
  const double k = sys.ion.wavenumber();
  return sys.excitation.p_e * sys.mirror.epsilon * sys.ion.decay_rate * constants::hbar * k * k /
         sys.ion.mass_kg;
}

}  // namespace

void IonSpecies::validate() const {
  require(mass_kg > 0.0, "ion.mass must be > 0");
  require(decay_rate > 0.0, "ion.decay_rate must be > 0");
  require(wavelength_m > 0.0, "ion.wavelength must be > 0");
}

IonSpecies IonSpecies::barium138() {
  return IonSpecies{
      .mass_kg = units::amu(constants::barium138_amu) - constants::electron_mass,
      .decay_rate = units::mhz_to_angular(15.4),
      .wavelength_m = units::nm(493.0),
  };
}

void MirrorCoupling::validate() const {
  require(epsilon >= 0.0 && epsilon <= 1.0, "mirror.epsilon must lie in [0, 1]");
}

void TrapConfig::validate() const {
  require(omega_trap > 0.0, "trap.omega_trap must be > 0");
  require(mode_angle_rad >= 0.0 && mode_angle_rad < std::numbers::pi / 2.0,
          "trap.mode_angle must lie in [0, pi/2)");
}

double TrapConfig::projection() const { return std::cos(mode_angle_rad); }

double excited_population(double saturation, double detuning, double decay_rate) {
  if (saturation < 0.0) throw ModelError("saturation must be >= 0");
  if (decay_rate <= 0.0) throw ModelError("decay rate must be > 0");
  if (std::isinf(saturation)) return 0.5;
  const double x = 2.0 * detuning / decay_rate;
  return 0.5 * saturation / (1.0 + saturation + x * x);
}

Excitation Excitation::from_saturation(double saturation, double detuning, double decay_rate) {
  return Excitation{excited_population(saturation, detuning, decay_rate)};
}

void Excitation::validate() const {
  require(p_e >= 0.0 && p_e <= 1.0, "excitation.p_e must lie in [0, 1]");
}

std::vector<std::string> IonMirrorSystem::validate() const {
  ion.validate();
  mirror.validate();
  trap.validate();
  excitation.validate();

  std::vector<std::string> warnings;
  const double ratio = vacuum_frequency(*this) / trap.omega_trap;
  if (ratio > kLinearisationWarnRatio) {
    std::ostringstream msg;
    msg << "omega_vac/omega_trap = " << ratio << " exceeds " << kLinearisationWarnRatio
        << "; linearised trap-frequency shift is inaccurate";
    warnings.push_back(msg.str());
  }
  return warnings;
}

IonMirrorSystem IonMirrorSystem::typical() {
  return IonMirrorSystem{
      .ion = IonSpecies::barium138(),
      .mirror = MirrorCoupling{.epsilon = 0.015, .nominal_distance_m = 0.25},
      .trap = TrapConfig{.omega_trap = units::mhz_to_angular(1.02),
                         .mode_angle_rad = units::deg_to_rad(54.0)},
      .excitation = Excitation{0.07},
  };
}

double mirror_potential(double z, const IonMirrorSystem& sys) {
  return -constants::hbar * sys.mirror.epsilon * sys.ion.decay_rate / 2.0 * sin2kz(z, sys.ion);
}

double mirror_force(double z, const IonMirrorSystem& sys) {
  return sys.excitation.p_e * constants::hbar * sys.ion.wavenumber() * sys.mirror.epsilon *
         sys.ion.decay_rate * cos2kz(z, sys.ion);
}

double vacuum_frequency(const IonMirrorSystem& sys) {
  return std::sqrt(2.0 * curvature_rate(sys));
}

double modified_trap_frequency(double z, const IonMirrorSystem& sys) {
  const double w = sys.trap.omega_trap;
  const double wv = vacuum_frequency(sys);
  const double radicand = w * w + wv * wv * sin2kz(z, sys.ion);
  if (!(radicand > 0.0)) {
    throw ImaginaryFrequencyError(
        "mirror anti-binding curvature exceeds the trap curvature; no real trap frequency");
  }
  return std::sqrt(radicand);
}

double trap_frequency_shift(double z, const IonMirrorSystem& sys) {
  return curvature_rate(sys) / sys.trap.omega_trap * sin2kz(z, sys.ion);
}

double modified_decay_rate(double z, const IonMirrorSystem& sys) {
  return sys.ion.decay_rate * (1.0 - sys.mirror.epsilon * cos2kz(z, sys.ion));
}

double recoil_frequency(const IonSpecies& ion) {
  const double k = ion.wavenumber();
  return units::angular_to_hz(constants::hbar * k * k / (2.0 * ion.mass_kg));
}

double max_acceleration(const IonMirrorSystem& sys) {
  return sys.excitation.p_e * constants::hbar * sys.ion.wavenumber() * sys.mirror.epsilon *
         sys.ion.decay_rate / sys.ion.mass_kg;
}

double positive_slope_midpoint(const IonSpecies& ion) {
  return std::numbers::pi / 4.0 / ion.wavenumber();
}

double negative_slope_midpoint(const IonSpecies& ion) {
  return 3.0 * std::numbers::pi / 4.0 / ion.wavenumber();
}

double peak_to_peak_shift_hz(const IonMirrorSystem& sys, double projection) {
  const double amplitude = curvature_rate(sys) / sys.trap.omega_trap;
  return units::angular_to_hz(2.0 * amplitude) * projection * projection;
}

Predictions predict(const IonMirrorSystem& sys, double projection) {
  const double zp = positive_slope_midpoint(sys.ion);
  const double p2 = projection * projection;
  const double amax = max_acceleration(sys);
  return Predictions{
      .vacuum_frequency_hz = units::angular_to_hz(vacuum_frequency(sys)),
      .shift_amplitude_hz = units::angular_to_hz(trap_frequency_shift(zp, sys)) * p2,
      .peak_to_peak_shift_hz = peak_to_peak_shift_hz(sys, projection),
      .exact_shift_hz =
          units::angular_to_hz(modified_trap_frequency(zp, sys) - sys.trap.omega_trap),
      .recoil_frequency_hz = recoil_frequency(sys.ion),
      .max_force_n = amax * sys.ion.mass_kg,
      .max_acceleration_mps2 = amax,
      .max_acceleration_g = amax / constants::standard_gravity,
      .level_shift_amplitude_hz =
          units::angular_to_hz(sys.mirror.epsilon * sys.ion.decay_rate / 2.0),
      .projection = projection,
  };
}

}  // namespace ionmirror::model
