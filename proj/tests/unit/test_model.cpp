#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ionmirror/model.hpp"

using namespace ionmirror;
using namespace ionmirror::model;

namespace {

// Independent hand values for 138Ba+ at 493 nm.
constexpr double kHbar = 1.054571817e-34;
constexpr double kPi = 3.14159265358979323846;
constexpr double kMass = 137.905247 * 1.66053906660e-27 - 9.1093837015e-31;
constexpr double kLambda = 493e-9;
constexpr double kK = 2 * kPi / kLambda;
constexpr double kGamma = 2 * kPi * 15.4e6;
constexpr double kOmegaTrap = 2 * kPi * 1.02e6;

IonMirrorSystem typical() { return IonMirrorSystem::typical(); }

// z with 2kz = phase.
double at_phase(double phase) { return phase / (2.0 * kK); }

}  // namespace

TEST(ModelDefaults, MatchExperimentParameters) {
  const auto s = typical();
  EXPECT_NEAR(s.ion.wavelength_m, 493e-9, 1e-18);
  EXPECT_NEAR(s.ion.decay_rate, kGamma, 1e-3);
  EXPECT_NEAR(s.ion.mass_kg / kMass, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(s.mirror.epsilon, 0.015);
  EXPECT_NEAR(s.trap.omega_trap, kOmegaTrap, 1e-6);
  EXPECT_NEAR(s.trap.mode_angle_rad, 54.0 * kPi / 180.0, 1e-12);
  EXPECT_DOUBLE_EQ(s.excitation.p_e, 0.07);
  EXPECT_TRUE(s.validate().empty());
}

TEST(MirrorPotential, NodesAndZeroCoupling) {
  auto s = typical();
  EXPECT_NEAR(mirror_potential(0.0, s), 0.0, 1e-40);
  EXPECT_NEAR(mirror_potential(at_phase(kPi), s), 0.0, 1e-40);
  s.mirror.epsilon = 0.0;
  for (double z : {0.0, 1e-8, 7.3e-8, 2e-7}) EXPECT_EQ(mirror_potential(z, s), 0.0);
}

TEST(MirrorPotential, PositiveSlopeValue) {
  const auto s = typical();
  const double u = mirror_potential(at_phase(kPi / 2), s);
  const double expected = -kHbar * 0.015 * kGamma / 2.0;
  EXPECT_NEAR(u / expected, 1.0, 1e-9);
  EXPECT_NEAR(u, -7.65e-29, 0.01e-29);
  EXPECT_NEAR(u / (2 * kPi * kHbar), -115.5e3, 0.1e3);
}

TEST(MirrorPotential, PeriodicInHalfWavelength) {
  const auto s = typical();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> zdist(-1e-6, 1e-6);
  for (int i = 0; i < 200; ++i) {
    const double z = zdist(rng);
    const double a = mirror_potential(z, s);
    const double b = mirror_potential(z + kLambda / 2, s);
    EXPECT_NEAR(a, b, 1e-12 * kHbar * 0.015 * kGamma);
  }
}

TEST(MirrorForce, ExtremesAndZeros) {
  const auto s = typical();
  EXPECT_NEAR(mirror_force(at_phase(kPi / 2), s), 0.0, 1e-35);
  const double f = mirror_force(0.0, s);
  EXPECT_NEAR(f / (0.07 * kHbar * kK * 0.015 * kGamma), 1.0, 1e-9);
  EXPECT_NEAR(f, 1.37e-22, 0.01e-22);
  EXPECT_NEAR(mirror_force(at_phase(kPi), s), -f, 1e-12 * f);
}

TEST(MirrorForce, MatchesCentralDifferenceOfPotential) {
  const auto s = typical();
  const double h = kLambda * 1e-6;
  const double scale = 0.07 * kHbar * kK * 0.015 * kGamma;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> zdist(0.0, kLambda);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const double z = zdist(rng);
    const double fd =
        -0.07 * (mirror_potential(z + h, s) - mirror_potential(z - h, s)) / (2 * h);
    const double f = mirror_force(z, s);
    // Relative test away from force zeros, absolute against the scale near them.
    EXPECT_LE(std::abs(fd - f), 1e-6 * std::max(std::abs(f), 1e-3 * scale)) << z;
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}

TEST(VacuumFrequency, TypicalValueAndScalings) {
  auto s = typical();
  const double w = vacuum_frequency(s);
  const double expected = std::sqrt(2 * 0.07 * 0.015 * kGamma * kHbar * kK * kK / kMass);
  EXPECT_NEAR(w / expected, 1.0, 1e-9);
  EXPECT_NEAR(w / (2 * kPi), 19.6e3, 0.2e3);

  s.mirror.epsilon *= 4;
  EXPECT_NEAR(vacuum_frequency(s) / w, 2.0, 1e-12);
  s.excitation.p_e = 0.0;
  EXPECT_EQ(vacuum_frequency(s), 0.0);
}

TEST(ModifiedTrapFrequency, ExactFormAndLimits) {
  auto s = typical();
  const double wv = vacuum_frequency(s);
  const double up = modified_trap_frequency(at_phase(kPi / 2), s);
  EXPECT_NEAR(up, std::sqrt(kOmegaTrap * kOmegaTrap + wv * wv), 1e-6);
  EXPECT_NEAR((up - kOmegaTrap) / (2 * kPi), 189.0, 1.0);
  EXPECT_NEAR(modified_trap_frequency(0.0, s), kOmegaTrap, 1e-6);

  const double dn = modified_trap_frequency(at_phase(-kPi / 2), s);
  // Odd to first order: the asymmetry is second order in wv^2 / w^2.
  const double asym = (up - kOmegaTrap) - (kOmegaTrap - dn);
  EXPECT_LT(std::abs(asym), std::pow(wv, 4) / std::pow(kOmegaTrap, 3));

  s.mirror.epsilon = 0.0;
  EXPECT_EQ(modified_trap_frequency(at_phase(kPi / 2), s), s.trap.omega_trap);
}

TEST(ModifiedTrapFrequency, ImaginaryFrequencyThrows) {
  auto s = typical();
  s.trap.omega_trap = 2 * kPi * 1e3;  // far below omega_vac
  EXPECT_THROW(modified_trap_frequency(at_phase(-kPi / 2), s), ImaginaryFrequencyError);
  EXPECT_FALSE(s.validate().empty());
}

TEST(TrapFrequencyShift, TypicalValue) {
  const auto s = typical();
  const double d = trap_frequency_shift(at_phase(kPi / 2), s);
  const double expected = 0.07 * 0.015 * kGamma * kHbar * kK * kK / (kMass * kOmegaTrap);
  EXPECT_NEAR(d / expected, 1.0, 1e-9);
  EXPECT_NEAR(d / (2 * kPi), 189.0, 1.0);
  EXPECT_NEAR(peak_to_peak_shift_hz(s), 2 * expected / (2 * kPi), 1e-6);
  EXPECT_NEAR(peak_to_peak_shift_hz(s), 378.0, 1.0);
  EXPECT_NEAR(trap_frequency_shift(0.0, s), 0.0, 1e-9);
  // Exact minus linearised is the second-order term -wv^4 / (8 w^3), about 0.017 Hz.
  const double wv = vacuum_frequency(s);
  const double exact = modified_trap_frequency(at_phase(kPi / 2), s) - kOmegaTrap;
  const double second = -std::pow(wv, 4) / (8 * std::pow(kOmegaTrap, 3));
  EXPECT_NEAR((exact - d) / second, 1.0, 1e-3);
  EXPECT_LT(std::abs(exact - d) / (2 * kPi), 0.02);
}

TEST(TrapFrequencyShift, WithinFifteenPercentOfQuotedPrediction) {
  EXPECT_NEAR(peak_to_peak_shift_hz(typical()) / 350.0, 1.0, 0.15);
}

TEST(TrapFrequencyShift, LinearisationBound) {
  const auto s = typical();
  const double wv = vacuum_frequency(s);
  const double bound = std::pow(wv, 4) / (2 * std::pow(kOmegaTrap, 3));
  for (int i = 0; i < 400; ++i) {
    const double z = kLambda * i / 400.0;
    const double lin = trap_frequency_shift(z, s);
    const double exact = modified_trap_frequency(z, s) - kOmegaTrap;
    EXPECT_LE(std::abs(lin - exact), bound * (1 + 1e-6) + 1e-9) << z;
  }
}

TEST(TrapFrequencyShift, PositiveOnRisingFringe) {
  const auto s = typical();
  for (int i = 0; i < 997; ++i) {
    const double z = 1.3 * kLambda * i / 997.0;
    const double h = 1e-12;
    const double d_rate = modified_decay_rate(z + h, s) - modified_decay_rate(z - h, s);
    const double shift = trap_frequency_shift(z, s);
    if (std::abs(std::sin(2 * kK * z)) < 1e-3) continue;
    EXPECT_EQ(d_rate > 0, shift > 0) << z;
  }
  EXPECT_NEAR(std::sin(2 * kK * positive_slope_midpoint(s.ion)), 1.0, 1e-12);
  EXPECT_NEAR(std::sin(2 * kK * negative_slope_midpoint(s.ion)), -1.0, 1e-12);
}

TEST(TrapFrequencyShift, ScalesWithParameters) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> r(0.5, 2.0);
  const double z = at_phase(kPi / 2);
  for (int i = 0; i < 20; ++i) {
    const double f = r(rng);
    const auto base = typical();
    const double d0 = trap_frequency_shift(z, base);

    auto s = base;
    s.excitation.p_e *= f * 0.5;
    EXPECT_NEAR(trap_frequency_shift(z, s) / d0, f * 0.5, 1e-12);
    s = base;
    s.mirror.epsilon *= f;
    EXPECT_NEAR(trap_frequency_shift(z, s) / d0, f, 1e-12);
    s = base;
    s.trap.omega_trap *= f;
    EXPECT_NEAR(trap_frequency_shift(z, s) / d0, 1 / f, 1e-12);
    s = base;
    s.ion.mass_kg *= f;
    EXPECT_NEAR(trap_frequency_shift(z, s) / d0, 1 / f, 1e-12);
  }
}

TEST(ModifiedDecayRate, EndpointsAndMean) {
  auto s = typical();
  EXPECT_NEAR(modified_decay_rate(0.0, s), kGamma * (1 - 0.015), 1e-3);
  EXPECT_NEAR(modified_decay_rate(at_phase(kPi), s), kGamma * (1 + 0.015), 1e-3);
  double mean = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) mean += modified_decay_rate(kLambda / 2 * i / n, s);
  EXPECT_NEAR(mean / n / kGamma, 1.0, 1e-12);
  s.mirror.epsilon = 0.0;
  EXPECT_EQ(modified_decay_rate(1.234e-7, s), s.ion.decay_rate);
}

TEST(RecoilFrequency, ValueAndScalings) {
  auto ion = IonSpecies::barium138();
  const double r = recoil_frequency(ion);
  EXPECT_NEAR(r, kHbar * kK * kK / (2 * kMass) / (2 * kPi), 1e-6);
  EXPECT_NEAR(r, 5.95e3, 0.05e3);
  auto heavy = ion;
  heavy.mass_kg *= 2;
  EXPECT_NEAR(recoil_frequency(heavy) / r, 0.5, 1e-12);
  auto red = ion;
  red.wavelength_m *= 2;
  EXPECT_NEAR(recoil_frequency(red) / r, 0.25, 1e-12);
}

TEST(ExcitedPopulation, TwoLevelSteadyState) {
  EXPECT_EQ(excited_population(0.0, 0.0, kGamma), 0.0);
  EXPECT_NEAR(excited_population(1e12, 0.0, kGamma), 0.5, 1e-9);
  EXPECT_NEAR(excited_population(0.4, -kGamma / 2, kGamma), 0.0833, 1e-4);
  EXPECT_THROW(excited_population(-1.0, 0.0, kGamma), ModelError);
}

TEST(MaxAcceleration, ValuesAndScalings) {
  auto s = typical();
  s.excitation.p_e = 0.1;
  const double a = max_acceleration(s);
  EXPECT_NEAR(a, 0.1 * kHbar * kK * 0.015 * kGamma / kMass, 1e-9 * a);
  EXPECT_NEAR(a, 852.0, 5.0);
  EXPECT_NEAR(a / 9.80665, 87.0, 1.0);
  auto s2 = s;
  s2.mirror.epsilon *= 3;
  EXPECT_NEAR(max_acceleration(s2) / a, 3.0, 1e-12);
  s2.excitation.p_e = 0.0;
  EXPECT_EQ(max_acceleration(s2), 0.0);
}

TEST(ZeroCoupling, EveryObservableIsFreeSpace) {
  auto s = typical();
  s.mirror.epsilon = 0.0;
  for (double z : {0.0, 3e-8, 1.2e-7, 4.4e-7}) {
    EXPECT_EQ(mirror_potential(z, s), 0.0);
    EXPECT_EQ(mirror_force(z, s), 0.0);
    EXPECT_EQ(trap_frequency_shift(z, s), 0.0);
    EXPECT_EQ(modified_trap_frequency(z, s), s.trap.omega_trap);
    EXPECT_EQ(modified_decay_rate(z, s), s.ion.decay_rate);
  }
  EXPECT_EQ(vacuum_frequency(s), 0.0);
}

TEST(Predictions, ReportingUnits) {
  const auto p = predict(typical());
  EXPECT_NEAR(p.peak_to_peak_shift_hz, 378.0, 1.0);
  EXPECT_NEAR(p.shift_amplitude_hz * 2, p.peak_to_peak_shift_hz, 1e-9);
  EXPECT_NEAR(p.vacuum_frequency_hz, 19.6e3, 0.2e3);
  EXPECT_NEAR(p.recoil_frequency_hz, 5.95e3, 0.05e3);
  EXPECT_NEAR(p.level_shift_amplitude_hz, 115.5e3, 0.1e3);
  EXPECT_NEAR(p.max_acceleration_g, 61.0, 1.0);
  EXPECT_DOUBLE_EQ(p.projection, 1.0);

  const double c = std::cos(54.0 * kPi / 180.0);
  const auto q = predict(typical(), c);
  EXPECT_NEAR(q.peak_to_peak_shift_hz / p.peak_to_peak_shift_hz, c * c, 1e-12);
}

TEST(Validation, RejectsBadParameters) {
  auto s = typical();
  s.mirror.epsilon = -0.1;
  EXPECT_THROW(s.validate(), ModelError);
  s = typical();
  s.excitation.p_e = 1.5;
  EXPECT_THROW(s.validate(), ModelError);
  s = typical();
  s.ion.wavelength_m = 0.0;
  EXPECT_THROW(s.validate(), ModelError);
  s = typical();
  s.trap.omega_trap = -1.0;
  EXPECT_THROW(s.validate(), ModelError);
}
