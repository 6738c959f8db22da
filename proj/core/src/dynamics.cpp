#include "ionmirror/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/special_functions/lambert_w.hpp>
#include <boost/random/normal_distribution.hpp>

namespace ionmirror::dynamics {

namespace {

using Normal = boost::random::normal_distribution<double>;

void require(bool ok, const std::string& what) {
  if (!ok) throw DynamicsError(what);
}

double trap_period(const model::IonMirrorSystem& sys) {
  return constants::two_pi / sys.trap.omega_trap;
}

}  // namespace

void SimParams::resolve(const model::IonMirrorSystem& sys) {
  if (dt <= 0.0) dt = trap_period(sys) / 100.0;
}

void SimParams::validate(const model::IonMirrorSystem& sys) const {
  require(dt > 0.0, "sim.dt must be > 0");
  require(dt <= trap_period(sys) / kMinStepsPerPeriod * (1.0 + 1e-9),
          "sim.dt must resolve the trap oscillation (dt <= 1/(50 f_trap))");
  require(bin_width > 0.0, "sim.bin_width must be > 0");
  require(duration >= 100.0 * bin_width, "sim.duration must cover at least 100 bins");
  require(detection_efficiency > 0.0 && detection_efficiency <= 1.0,
          "sim.detection_efficiency must lie in (0, 1]");
  require(projection >= 0.0 && projection <= 1.0, "sim.projection must lie in [0, 1]");
  require(cooling_rate >= 0.0, "sim.cooling_rate must be >= 0");
  require(diffusion >= 0.0, "sim.diffusion must be >= 0");
  require(visibility(sys) >= 0.0 && visibility(sys) <= 1.0,
          "sim.fringe_visibility must lie in [0, 1]");
}

double SimParams::visibility(const model::IonMirrorSystem& sys) const {
  return fringe_visibility < 0.0 ? sys.mirror.epsilon : fringe_visibility;
}

Stepper::Stepper(const model::IonMirrorSystem& sys, const SimParams& params)
    : dt_(params.dt),
      omega_(sys.trap.omega_trap),
      cos_half_(std::cos(0.5 * sys.trap.omega_trap * params.dt)),
      sin_half_(std::sin(0.5 * sys.trap.omega_trap * params.dt)),
      cooling_rate_(params.cooling_rate),
      diffusion_(params.diffusion) {
  const double k = sys.ion.wavenumber();
  const double max_force = sys.excitation.p_e * constants::hbar * k * sys.mirror.epsilon *
                           sys.ion.decay_rate;
  kick_scale_ = params.projection * max_force / sys.ion.mass_kg;
  phase_per_q_ = 2.0 * k * params.projection;
  wavenumber_ = k;
  if (cooling_rate_ > 0.0) {
    ou_decay_ = std::exp(-cooling_rate_ * dt_);
    ou_kick_ = std::sqrt(diffusion_ / cooling_rate_ * -std::expm1(-2.0 * cooling_rate_ * dt_));
  } else {
    ou_decay_ = 1.0;
    ou_kick_ = std::sqrt(2.0 * diffusion_ * dt_);
  }
  set_mirror_position(params.mirror_offset);
}

void Stepper::set_mirror_position(double z) {
  mirror_z_ = z;
  mirror_phase_ = 2.0 * wavenumber_ * z;
  cos_mirror_ = std::cos(mirror_phase_);
  sin_mirror_ = std::sin(mirror_phase_);
}

double Stepper::mirror_acceleration(double q) const {
  const double x = phase_per_q_ * q;
  return kick_scale_ * (cos_mirror_ * std::cos(x) - sin_mirror_ * std::sin(x));
}

double Stepper::stationary_velocity_variance() const {
  return cooling_rate_ > 0.0 ? diffusion_ / cooling_rate_ : 0.0;
}

void Stepper::advance(MotionState& s, double& accel, Engine& rng) const {
  Normal normal;
  const double half = 0.5 * dt_;
  s.v += half * accel;
  const double q = cos_half_ * s.q + sin_half_ / omega_ * s.v;
  double v = -sin_half_ * omega_ * s.q + cos_half_ * s.v;
  v = ou_decay_ * v + ou_kick_ * normal(rng);
  s.q = cos_half_ * q + sin_half_ / omega_ * v;
  s.v = -sin_half_ * omega_ * q + cos_half_ * v;
  accel = mirror_acceleration(s.q);
  s.v += half * accel;
}

MotionState Stepper::step(MotionState s, Engine& rng) const {
  double accel = mirror_acceleration(s.q);
  advance(s, accel, rng);
  if (!std::isfinite(s.q) || !std::isfinite(s.v)) {
    throw DynamicsError("integrator produced a non-finite state");
  }
  return s;
}

MotionState step(MotionState state, double mirror_position, const model::IonMirrorSystem& sys,
                 const SimParams& params, Engine& rng) {
  Stepper stepper(sys, params);
  stepper.set_mirror_position(mirror_position);
  return stepper.step(state, rng);
}

double photon_rate(double phase, const model::IonMirrorSystem& sys, const SimParams& params) {
  return midpoint_rate(sys, params) * (1.0 - params.visibility(sys) * std::cos(phase));
}

double midpoint_rate(const model::IonMirrorSystem& sys, const SimParams& params) {
  return params.detection_efficiency * sys.excitation.p_e * sys.ion.decay_rate;
}

double stationary_phase_variance(const model::IonMirrorSystem& sys, const SimParams& params) {
  if (params.cooling_rate <= 0.0) return 0.0;
  const double kp = 2.0 * sys.ion.wavenumber() * params.projection;
  const double w = sys.trap.omega_trap;
  return kp * kp * params.diffusion / (params.cooling_rate * w * w);
}

servo::FringeModel fringe_model(const model::IonMirrorSystem& sys, const SimParams& params) {
  const double s2 = stationary_phase_variance(sys, params);
  return servo::FringeModel{.mean_rate = midpoint_rate(sys, params),
                            .visibility = params.visibility(sys) * std::exp(-0.5 * s2),
                            .wavenumber = sys.ion.wavenumber()};
}

double predicted_sideband_ratio(double phase_variance, double mean_rate, double visibility,
                                double fwhm_hz) {
  return mean_rate * visibility * visibility * phase_variance * std::exp(-phase_variance) /
         (std::numbers::pi * fwhm_hz);
}

CoolingParams calibrate_cooling(double target_fwhm_hz, const model::IonMirrorSystem& sys,
                                const SimParams& params, double target_snr_db,
                                double reference_rate) {
  require(target_fwhm_hz > 0.0, "cooling target FWHM must be > 0");
  require(reference_rate > 0.0, "cooling reference rate must be > 0");
  require(target_snr_db > 0.0, "cooling target SNR must be > 0 dB");
  const double gamma = constants::two_pi * target_fwhm_hz;
  const double vis = params.visibility(sys);
  require(vis > 0.0, "cooling calibration needs a nonzero fringe visibility");

  const double ratio = std::pow(10.0, target_snr_db / 10.0) - 1.0;
  const double c = ratio * std::numbers::pi * target_fwhm_hz / (reference_rate * vis * vis);
  require(c < std::exp(-1.0),
          "target sideband SNR is unreachable at this count rate and visibility");
  const double s2 = -boost::math::lambert_w0(-c);

  const double kp = 2.0 * sys.ion.wavenumber() * params.projection;
  require(kp > 0.0, "cooling calibration needs a nonzero projection");
  const double w = sys.trap.omega_trap;
  const double q_var = s2 / (kp * kp);
  return CoolingParams{.cooling_rate = gamma, .diffusion = gamma * w * w * q_var,
                       .phase_variance = s2};
}

RunResult simulate_run(const model::IonMirrorSystem& sys, SimParams params, ServoLoop* servo,
                       std::optional<MotionState> initial) {
  params.resolve(sys);
  params.validate(sys);
  Engine rng = make_stream(params.seed, 0);
  Normal normal;

  Stepper stepper(sys, params);
  const double dt = stepper.dt();
  const double omega = stepper.omega();
  const auto n_steps = static_cast<std::uint64_t>(std::llround(params.duration / dt));

  MotionState s;
  if (initial) {
    s = *initial;
  } else if (params.thermal_start && params.cooling_rate > 0.0) {
    const double sv = std::sqrt(stepper.stationary_velocity_variance());
    s.q = sv / omega * normal(rng);
    s.v = sv * normal(rng);
  }

  const double base_rate = midpoint_rate(sys, params);
  const double vis = params.visibility(sys);
  const double rate_max = base_rate * (1.0 + vis);
  photon::ThinningSampler sampler(rate_max, 0.0, rng);

  RunResult result;
  result.photons.duration = static_cast<double>(n_steps) * dt;
  result.photons.event_times.reserve(
      static_cast<std::size_t>(base_rate * result.photons.duration * 1.1) + 16);
  if (params.record_stride > 0) {
    const std::size_t n_rec = n_steps / params.record_stride + 1;
    result.trajectory.times.reserve(n_rec);
    result.trajectory.positions.reserve(n_rec);
    result.trajectory.velocities.reserve(n_rec);
    result.trajectory.mirror_path.reserve(n_rec);
  }

  std::uint64_t steps_per_window = n_steps;
  if (servo) {
    servo->config.validate();
    steps_per_window = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::llround(servo->config.update_period / dt)));
  }
  const double window_dt = static_cast<double>(steps_per_window) * dt;

  auto mirror_displacement = [&]() {
    return servo ? servo->state.mirror_displacement + servo->drift.value() : 0.0;
  };
  stepper.set_mirror_position(params.mirror_offset + mirror_displacement());

  std::uint64_t n = 0;
  double accel = stepper.mirror_acceleration(s.q);
  while (n < n_steps) {
    const std::uint64_t window_end = std::min(n_steps, n + steps_per_window);
    const std::size_t events_before = result.photons.event_times.size();

    for (; n < window_end; ++n) {
      if (params.record_stride > 0 && n % params.record_stride == 0) {
        result.trajectory.times.push_back(static_cast<double>(n) * dt);
        result.trajectory.positions.push_back(s.q);
        result.trajectory.velocities.push_back(s.v);
        result.trajectory.mirror_path.push_back(stepper.mirror_position() -
                                                params.mirror_offset);
      }
      const MotionState start = s;

      stepper.advance(s, accel, rng);

      const double t_next = static_cast<double>(n + 1) * dt;
      while (sampler.next_candidate() < t_next) {
        // Free-oscillator interpolation inside the step.
        const double t_c = sampler.next_candidate();
        const double tau = t_c - static_cast<double>(n) * dt;
        const double q_c = start.q * std::cos(omega * tau) + start.v / omega * std::sin(omega * tau);
        const double rate = base_rate * (1.0 - vis * std::cos(stepper.fringe_phase(q_c)));
        if (sampler.resolve(rate, rng)) result.photons.event_times.push_back(t_c);
      }
    }
    if (!std::isfinite(s.q) || !std::isfinite(s.v)) {
      throw DynamicsError("integrator produced a non-finite state at t = " +
                          std::to_string(static_cast<double>(n) * dt) + " s");
    }

    if (servo) {
      const auto counts = result.photons.event_times.size() - events_before;
      servo->state = servo::update(servo->state, counts, servo->config, window_dt);
      servo->drift.advance(window_dt, rng);
      stepper.set_mirror_position(params.mirror_offset + mirror_displacement());
      accel = stepper.mirror_acceleration(s.q);
      if (servo->record_telemetry) {
        servo->telemetry.push_back(servo::TelemetrySample{
            .time = static_cast<double>(n) * dt,
            .mirror_displacement = servo->state.mirror_displacement,
            .distance_offset = stepper.mirror_position(),
            .smoothed_rate = servo->state.smoothed_rate,
            .error_signal = servo->config.setpoint - servo->state.smoothed_rate,
            .saturated = servo->state.saturated,
        });
      }
    }
  }
  result.final_state = s;
  return result;
}

}  // namespace ionmirror::dynamics
