#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ionmirror/dynamics.hpp"
#include "ionmirror/servo.hpp"
#include "ionmirror/spectral.hpp"

using namespace ionmirror;
using namespace ionmirror::dynamics;

namespace {

constexpr double kPi = std::numbers::pi;

model::IonMirrorSystem typical() { return model::IonMirrorSystem::typical(); }

SimParams base_params(const model::IonMirrorSystem& sys) {
  SimParams p;
  p.dt = 1.0 / (50.0 * 1.02e6);
  p.duration = 0.01;
  p.seed = 17;
  p.projection = 1.0;
  p.detection_efficiency = 1e4 / (0.1 * sys.ion.decay_rate);
  p.fringe_visibility = 0.95;
  p.cooling_rate = 2 * kPi * 500.0;
  // Phase variance 0.2 at the trap frequency.
  const double kp = 2 * sys.ion.wavenumber();
  p.diffusion = 0.2 / (kp * kp) * p.cooling_rate * std::pow(sys.trap.omega_trap, 2);
  p.mirror_offset = model::positive_slope_midpoint(sys.ion);
  return p;
}

// Frequency (Hz) from upward zero crossings, linearly interpolated.
double crossing_frequency(const std::vector<double>& t, const std::vector<double>& q) {
  double first = -1, last = -1;
  int n = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    if (q[i - 1] < 0.0 && q[i] >= 0.0) {
      const double tc = t[i - 1] + (t[i] - t[i - 1]) * (-q[i - 1]) / (q[i] - q[i - 1]);
      if (first < 0) first = tc;
      last = tc;
      ++n;
    }
  }
  return (n - 1) / (last - first);
}

}  // namespace

TEST(Step, UndampedOscillatorConservesEnergy) {
  auto sys = typical();
  sys.mirror.epsilon = 0.0;
  SimParams p = base_params(sys);
  p.cooling_rate = 0.0;
  p.diffusion = 0.0;
  Stepper stepper(sys, p);
  Engine rng = make_stream(1, 0);
  const double w = sys.trap.omega_trap;
  MotionState s{.q = 1e-8, .v = 0.3};
  auto energy = [&](const MotionState& m) { return 0.5 * m.v * m.v + 0.5 * w * w * m.q * m.q; };
  const double e0 = energy(s);
  for (int i = 0; i < 100000; ++i) s = stepper.step(s, rng);
  EXPECT_NEAR(energy(s) / e0, 1.0, 1e-6);
}

TEST(Step, FreeFunctionMatchesStepper) {
  const auto sys = typical();
  const SimParams p = base_params(sys);
  Engine a = make_stream(4, 0), b = make_stream(4, 0);
  Stepper stepper(sys, p);
  stepper.set_mirror_position(3e-8);
  MotionState s1{.q = 2e-9, .v = 0.01}, s2 = s1;
  for (int i = 0; i < 50; ++i) {
    s1 = stepper.step(s1, a);
    s2 = step(s2, 3e-8, sys, p, b);
  }
  EXPECT_EQ(s1.q, s2.q);
  EXPECT_EQ(s1.v, s2.v);
}

TEST(Step, OrnsteinUhlenbeckVelocityVariance) {
  auto sys = typical();
  sys.mirror.epsilon = 0.0;
  SimParams p = base_params(sys);
  p.cooling_rate = 2 * kPi * 20e3;  // short correlation time for a quick average
  p.diffusion = 3.0;
  Stepper stepper(sys, p);
  Engine rng = make_stream(2, 0);
  const double var = p.diffusion / p.cooling_rate;
  EXPECT_DOUBLE_EQ(stepper.stationary_velocity_variance(), var);
  MotionState s{.q = 0.0, .v = std::sqrt(var)};
  double acc = 0.0, acc_q = 0.0;
  const int n = 4000000;
  for (int i = 0; i < n; ++i) {
    s = stepper.step(s, rng);
    acc += s.v * s.v;
    acc_q += s.q * s.q;
  }
  EXPECT_NEAR(acc / n / var, 1.0, 0.05);
  const double w = sys.trap.omega_trap;
  EXPECT_NEAR(acc_q / n / (var / (w * w)), 1.0, 0.05);
}

TEST(Step, MirrorAccelerationIsGradientOfPotential) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  p.projection = std::cos(54.0 * kPi / 180.0);
  Stepper stepper(sys, p);
  const double z0 = 4.1e-8;
  stepper.set_mirror_position(z0);
  const double m = sys.ion.mass_kg;
  const double pe = sys.excitation.p_e;
  const double h = 1e-15;
  for (double q : {-2e-8, -3e-9, 0.0, 5e-9, 1.7e-8}) {
    // Potential energy of the mode: P_e U(z0 + p q).
    auto pot = [&](double x) { return pe * model::mirror_potential(z0 + p.projection * x, sys); };
    const double fd = -(pot(q + h) - pot(q - h)) / (2 * h) / m;
    const double a = stepper.mirror_acceleration(q);
    EXPECT_NEAR(fd, a, 1e-6 * stepper.mirror_acceleration(q - z0 / p.projection)) << q;
  }
}

TEST(Step, SmallOscillationFrequencyFollowsProjectedModel) {
  for (int sign : {+1, -1}) {
    const auto sys = typical();
    SimParams p = base_params(sys);
    p.projection = std::cos(54.0 * kPi / 180.0);
    p.cooling_rate = 0.0;
    p.diffusion = 0.0;
    const double z0 = sign > 0 ? model::positive_slope_midpoint(sys.ion)
                               : model::negative_slope_midpoint(sys.ion);
    Stepper stepper(sys, p);
    stepper.set_mirror_position(z0);
    Engine rng = make_stream(3, 0);
    // Phase excursion 2 k p q of 0.01 rad.
    MotionState s{.q = 0.01 / (2 * sys.ion.wavenumber() * p.projection), .v = 0.0};
    const int n = 1000000;
    std::vector<double> t(n), q(n);
    for (int i = 0; i < n; ++i) {
      t[i] = i * p.dt;
      q[i] = s.q;
      s = stepper.step(s, rng);
    }
    // Oracle: the model frequency with the projected wavenumber, k -> p k.
    const double wv = model::vacuum_frequency(sys) * p.projection;
    const double w = sys.trap.omega_trap;
    const double expected = std::sqrt(w * w + sign * wv * wv) / (2 * kPi);
    const double measured = crossing_frequency(t, q);
    EXPECT_NEAR(measured, expected, 0.05) << sign;
    const double delta = p.projection * p.projection *
                         model::trap_frequency_shift(z0, sys) / (2 * kPi);
    EXPECT_NEAR(measured - 1.02e6, delta, 0.05) << sign;
  }
}

TEST(Step, StaticForceDisplacesEquilibrium) {
  for (double phase : {0.0, kPi}) {
    const auto sys = typical();
    SimParams p = base_params(sys);
    p.projection = std::cos(54.0 * kPi / 180.0);
    p.cooling_rate = 2 * kPi * 20e3;
    p.diffusion = 0.0;
    Stepper stepper(sys, p);
    stepper.set_mirror_position(phase / (2 * sys.ion.wavenumber()));
    Engine rng = make_stream(3, 0);
    MotionState s;
    double mean = 0.0;
    const int n = 400000, tail = 100000;
    for (int i = 0; i < n; ++i) {
      s = stepper.step(s, rng);
      if (i >= n - tail) mean += s.q / tail;
    }
    const double w = sys.trap.omega_trap;
    const double expected = std::cos(phase) * p.projection * model::max_acceleration(sys) / (w * w);
    EXPECT_NEAR(mean / expected, 1.0, 0.1);
  }
}

TEST(SimulateRun, DeterministicUnderFixedSeed) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  p.record_stride = 7;
  const RunResult a = simulate_run(sys, p);
  const RunResult b = simulate_run(sys, p);
  EXPECT_EQ(a.photons.event_times, b.photons.event_times);
  EXPECT_EQ(a.trajectory.positions, b.trajectory.positions);
  EXPECT_EQ(a.trajectory.velocities, b.trajectory.velocities);
  EXPECT_EQ(a.final_state.q, b.final_state.q);
  p.seed += 1;
  const RunResult c = simulate_run(sys, p);
  EXPECT_NE(a.photons.event_times, c.photons.event_times);
}

TEST(SimulateRun, TrajectoryShape) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  p.record_stride = 10;
  const RunResult r = simulate_run(sys, p);
  const auto& tr = r.trajectory;
  ASSERT_FALSE(tr.times.empty());
  EXPECT_EQ(tr.times.size(), tr.positions.size());
  EXPECT_EQ(tr.times.size(), tr.velocities.size());
  EXPECT_EQ(tr.times.size(), tr.mirror_path.size());
  for (std::size_t i = 1; i < tr.times.size(); ++i) {
    EXPECT_NEAR(tr.times[i] - tr.times[i - 1], 10 * p.dt, 1e-15);
  }
  for (std::size_t i = 1; i < r.photons.event_times.size(); ++i) {
    ASSERT_LT(r.photons.event_times[i - 1], r.photons.event_times[i]);
  }
}

TEST(SimulateRun, ZeroCouplingCollapse) {
  auto sys = typical();
  sys.mirror.epsilon = 0.0;
  SimParams p = base_params(sys);
  p.fringe_visibility = -1.0;  // detected contrast follows epsilon
  p.duration = 0.2;
  p.record_stride = 5;
  const RunResult a = simulate_run(sys, p);
  p.mirror_offset = model::negative_slope_midpoint(sys.ion);
  const RunResult b = simulate_run(sys, p);
  // No force and no fringe: the mirror position is irrelevant.
  EXPECT_EQ(a.trajectory.positions, b.trajectory.positions);
  EXPECT_EQ(a.photons.event_times, b.photons.event_times);
  const double r = midpoint_rate(sys, p);
  const double n = static_cast<double>(a.photons.event_times.size());
  EXPECT_NEAR(n, r * a.photons.duration, 3 * std::sqrt(r * a.photons.duration));
}

TEST(SimulateRun, MeanRateFollowsDecayRateFringe) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  p.fringe_visibility = -1.0;
  p.mirror_offset = 0.0;  // cos(2kz) = 1
  p.duration = 1.0;
  const RunResult r = simulate_run(sys, p);
  const double expected = p.detection_efficiency * sys.excitation.p_e *
                          model::modified_decay_rate(0.0, sys) * r.photons.duration;
  const double n = static_cast<double>(r.photons.event_times.size());
  EXPECT_NEAR(n, expected, 2 * std::sqrt(expected));
}

TEST(SimulateRun, ThermalMotionReducesFringeContrast) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  p.detection_efficiency = 0.2;
  // Fringe maximum: slow amplitude fluctuations are a small fraction of the rate there.
  p.mirror_offset = kPi / (2 * sys.ion.wavenumber());
  p.duration = 0.5;
  const RunResult r = simulate_run(sys, p);
  const double s2 = stationary_phase_variance(sys, p);
  EXPECT_NEAR(s2, 0.2, 1e-12);
  // <cos(phi0 + x)> = cos(phi0) exp(-s^2/2) for Gaussian x.
  const double expected =
      midpoint_rate(sys, p) * (1 + 0.95 * std::exp(-s2 / 2)) * r.photons.duration;
  const double n = static_cast<double>(r.photons.event_times.size());
  EXPECT_NEAR(n / expected, 1.0, 0.01);
  EXPECT_NEAR(fringe_model(sys, p).visibility, 0.95 * std::exp(-0.1), 1e-12);
}

TEST(SimulateRun, CountRateCalibration) {
  // 1e4 counts/s at P_e = 0.1 on the slope midpoints.
  auto sys = typical();
  sys.excitation.p_e = 0.1;
  SimParams p = base_params(sys);
  EXPECT_NEAR(midpoint_rate(sys, p), 1e4, 1e-6);
  EXPECT_NEAR(photon_rate(kPi / 2, sys, p), 1e4, 1e-6);
  EXPECT_NEAR(photon_rate(0.0, sys, p), 1e4 * 0.05, 1e-6);
}

TEST(SimulateRun, FreeOscillatorSidebandAtTrapFrequency) {
  auto sys = typical();
  sys.mirror.epsilon = 0.0;
  SimParams p = base_params(sys);
  // Narrow line so the peak sits in one analyser bin.
  const CoolingParams cp = calibrate_cooling(20.0, sys, p, 10.0, 7000.0);
  p.cooling_rate = cp.cooling_rate;
  p.diffusion = cp.diffusion;
  p.duration = 2.0;
  const RunResult r = simulate_run(sys, p);
  spectral::WelchSettings ws;
  ws.sample_interval = p.bin_width;
  ws.segment_length = spectral::segment_length_for(50.0, p.bin_width);
  const auto psd =
      spectral::spectrum_from_events(r.photons.event_times, 0.0, r.photons.duration, ws);
  std::size_t best = 0;
  for (std::size_t i = 0; i < psd.psd.size(); ++i) {
    if (psd.frequencies[i] < 0.9e6 || psd.frequencies[i] > 1.1e6) continue;
    if (best == 0 || psd.psd[i] > psd.psd[best]) best = i;
  }
  EXPECT_NEAR(psd.frequencies[best], 1.02e6, psd.resolution_bandwidth);
}

TEST(SimulateRun, LockedRateIsStationary) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  p.detection_efficiency = 0.03;
  p.duration = 10.0;
  const servo::FringeModel fringe = fringe_model(sys, p);
  servo::ServoConfig cfg;
  cfg.setpoint = fringe.mean_rate;
  cfg.gain = servo::nominal_gain(fringe, 1.0);
  cfg = servo::select_slope(cfg, servo::Slope::positive);
  ServoLoop loop{.config = cfg,
                 .state = servo::ServoState::initial(0.0, cfg.setpoint),
                 .drift = servo::DriftInjector(servo::DriftConfig{.linear_rate = 20e-9}),
                 .telemetry = {},
                 .record_telemetry = false};
  const RunResult r = simulate_run(sys, p, &loop);
  const auto& ev = r.photons.event_times;
  const auto mid = std::lower_bound(ev.begin(), ev.end(), 5.0);
  const double first = static_cast<double>(mid - ev.begin()) / 5.0;
  const double second = static_cast<double>(ev.end() - mid) / 5.0;
  EXPECT_LT(std::abs(second - first) / first, 0.01);
  EXPECT_FALSE(loop.state.saturated);
}

TEST(CalibrateCooling, WidthSetsDamping) {
  const auto sys = typical();
  const SimParams p = base_params(sys);
  const CoolingParams a = calibrate_cooling(500.0, sys, p, 2.3, 7000.0);
  EXPECT_NEAR(a.cooling_rate, 2 * kPi * 500.0, 1e-9);
  const CoolingParams b = calibrate_cooling(1000.0, sys, p, 2.3, 7000.0);
  EXPECT_NEAR(b.cooling_rate / a.cooling_rate, 2.0, 1e-12);
  EXPECT_THROW(calibrate_cooling(0.0, sys, p, 2.3, 7000.0), DynamicsError);
}

TEST(CalibrateCooling, PhaseVarianceSolvesSidebandEquation) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  const CoolingParams cp = calibrate_cooling(500.0, sys, p, 2.3, 7000.0);
  // Independent root of s e^{-s} = c on (0, 1) by bisection.
  const double c = (std::pow(10.0, 0.23) - 1) * kPi * 500.0 / (7000.0 * 0.95 * 0.95);
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid * std::exp(-mid) < c ? lo : hi) = mid;
  }
  EXPECT_NEAR(cp.phase_variance, lo, 1e-12);
  p.cooling_rate = cp.cooling_rate;
  p.diffusion = cp.diffusion;
  EXPECT_NEAR(stationary_phase_variance(sys, p), cp.phase_variance, 1e-12);
  const double ratio = predicted_sideband_ratio(cp.phase_variance, 7000.0, 0.95, 500.0);
  EXPECT_NEAR(10 * std::log10(1 + ratio), 2.3, 1e-9);
  // Unreachable target.
  EXPECT_THROW(calibrate_cooling(500.0, sys, p, 30.0, 7000.0), DynamicsError);
}

TEST(SimParams, ValidationNamesField) {
  const auto sys = typical();
  SimParams p = base_params(sys);
  EXPECT_NO_THROW(p.validate(sys));
  auto expect_error = [&](SimParams bad, const std::string& field) {
    try {
      bad.validate(sys);
      FAIL() << "expected error for " << field;
    } catch (const DynamicsError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  SimParams bad = p;
  bad.dt = 1.0 / (20 * 1.02e6);
  expect_error(bad, "sim.dt");
  bad = p;
  bad.detection_efficiency = 0.0;
  expect_error(bad, "sim.detection_efficiency");
  bad = p;
  bad.detection_efficiency = 1.5;
  expect_error(bad, "sim.detection_efficiency");
  bad = p;
  bad.duration = 50 * p.bin_width;
  expect_error(bad, "sim.duration");
  bad = p;
  bad.projection = 1.2;
  expect_error(bad, "sim.projection");

  SimParams unset = p;
  unset.dt = 0.0;
  unset.resolve(sys);
  EXPECT_NEAR(unset.dt, 1.0 / (100 * 1.02e6), 1e-18);
}
