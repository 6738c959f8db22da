#include "ionmirror/servo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <boost/random/normal_distribution.hpp>

namespace ionmirror::servo {

double FringeModel::rate(double z) const {
  return mean_rate * (1.0 - visibility * std::cos(2.0 * wavenumber * z));
}

double FringeModel::slope(double z) const {
  return 2.0 * wavenumber * mean_rate * visibility * std::sin(2.0 * wavenumber * z);
}

double FringeModel::midpoint_slope() const { return 2.0 * wavenumber * mean_rate * visibility; }

double FringeModel::lock_position(double setpoint, Slope slope, int order) const {
  if (!(mean_rate > 0.0) || !(visibility > 0.0)) {
    throw ServoError("fringe model needs a positive mean rate and visibility");
  }
  const double c = (1.0 - setpoint / mean_rate) / visibility;
  if (!(std::abs(c) < 1.0)) {
    throw ServoError("setpoint at or beyond the fringe extremes; lock point undefined");
  }
  const double base = std::acos(c);  // (0, pi): rising part of -cos
  const double phase = slope == Slope::positive ? base : 2.0 * std::numbers::pi - base;
  return (phase + 2.0 * std::numbers::pi * order) / (2.0 * wavenumber);
}

void ServoConfig::validate() const {
  if (!(integration_time > 0.0)) throw ServoError("servo.integration_time must be > 0");
  if (sign != 1 && sign != -1) throw ServoError("servo.sign must be +1 or -1");
  if (!(update_period > 0.0) || update_period > integration_time / 10.0 * (1.0 + 1e-12)) {
    throw ServoError("servo.update_period must lie in (0, integration_time/10]");
  }
  if (!(smoothing_window >= 0.0)) throw ServoError("servo.smoothing_window must be >= 0");
  if (!(actuator_range > 0.0)) throw ServoError("servo.actuator_range must be > 0");
  if (!(gain >= 0.0)) throw ServoError("servo.gain must be >= 0");
}

double nominal_gain(const FringeModel& fringe, double integration_time) {
  const double quarter_wave = std::numbers::pi / (2.0 * fringe.wavenumber);
  return quarter_wave / (integration_time * fringe.amplitude());
}

double loop_time_constant(const ServoConfig& config, double fringe_slope) {
  return 1.0 / (config.gain * fringe_slope);
}

double smoothing_alpha(const ServoConfig& config) {
  if (config.smoothing_window <= 0.0) return 1.0;
  return 1.0 - std::exp(-config.update_period / config.smoothing_window);
}

double stability_limit_gain(const ServoConfig& config, double fringe_slope) {
  const double alpha = smoothing_alpha(config);
  return (4.0 / alpha - 2.0) / (fringe_slope * config.update_period);
}

ServoState ServoState::initial(double displacement, double rate_estimate) {
  return ServoState{.mirror_displacement = displacement,
                    .smoothed_rate = rate_estimate,
                    .locked = true,
                    .saturated = false};
}

ServoState update(const ServoState& state, std::uint64_t counts, const ServoConfig& config,
                  double dt) {
  ServoState next = state;
  const double measured = static_cast<double>(counts) / dt;
  const double alpha =
      config.smoothing_window > 0.0 ? 1.0 - std::exp(-dt / config.smoothing_window) : 1.0;
  next.smoothed_rate += alpha * (measured - state.smoothed_rate);

  const double error = config.setpoint - next.smoothed_rate;
  double u = state.mirror_displacement + config.sign * config.gain * error * dt;
  if (std::abs(u) > config.actuator_range) {
    u = std::clamp(u, -config.actuator_range, config.actuator_range);
    next.saturated = true;
    next.locked = false;
  }
  next.mirror_displacement = u;
  return next;
}

ServoConfig select_slope(ServoConfig config, Slope slope) {
  config.sign = slope_sign(slope);
  return config;
}

double DriftInjector::advance(double dt, Engine& rng) {
  t_ += dt;
  if (config_.random_walk > 0.0) {
    boost::random::normal_distribution<double> step(0.0, config_.random_walk * std::sqrt(dt));
    walk_ += step(rng);
  }
  value_ = config_.linear_rate * t_ +
           config_.sine_amplitude * std::sin(2.0 * std::numbers::pi * config_.sine_frequency * t_) +
           walk_;
  return value_;
}

double lock_quality(std::span<const TelemetrySample> telemetry, double window,
                    double integration_time) {
  if (window < 10.0 * integration_time) {
    throw ServoError("lock_quality window must cover at least 10 integration times");
  }
  if (telemetry.size() < 2) throw ServoError("lock_quality: insufficient telemetry");
  const double t_end = telemetry.back().time;
  // Samples mark the end of each update, so a full record spans one period less.
  const double period = (t_end - telemetry.front().time) / static_cast<double>(telemetry.size() - 1);
  if (t_end - telemetry.front().time + period < window * (1.0 - 1e-9)) {
    throw ServoError("lock_quality: telemetry shorter than the requested window");
  }
  const auto first = std::lower_bound(
      telemetry.begin(), telemetry.end(), t_end - window,
      [](const TelemetrySample& s, double t) { return s.time < t; });
  const std::span<const TelemetrySample> tail(first, telemetry.end());

  const double sample_period = (tail.back().time - tail.front().time) /
                               static_cast<double>(tail.size() - 1);
  const auto half = static_cast<std::size_t>(std::max(0.0, std::round(0.005 / sample_period)));
  const std::size_t n = tail.size();
  if (n <= 2 * half) throw ServoError("lock_quality: insufficient telemetry");

  // Centred moving average via prefix sums.
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + tail[i].distance_offset;
  std::vector<double> slow;
  slow.reserve(n - 2 * half);
  for (std::size_t i = half; i + half < n; ++i) {
    slow.push_back((prefix[i + half + 1] - prefix[i - half]) / static_cast<double>(2 * half + 1));
  }
  double mean = 0.0;
  for (double x : slow) mean += x;
  mean /= static_cast<double>(slow.size());
  double ss = 0.0;
  for (double x : slow) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(slow.size())) * 1e9;
}

ServoState evolve_lock(const FringeModel& fringe, const ServoConfig& config, ServoState state,
                       double offset, double duration, DriftInjector& drift, Engine& rng,
                       std::vector<TelemetrySample>* telemetry, double t0) {
  const double dt = config.update_period;
  const auto n_updates = static_cast<std::size_t>(std::llround(duration / dt));
  for (std::size_t i = 0; i < n_updates; ++i) {
    const double z = offset + state.mirror_displacement + drift.value();
    const double expected = std::max(0.0, fringe.rate(z)) * dt;
    std::uint64_t counts = 0;
    if (expected > 0.0) counts = std::poisson_distribution<std::uint64_t>(expected)(rng);
    state = update(state, counts, config, dt);
    drift.advance(dt, rng);
    if (telemetry) {
      telemetry->push_back(TelemetrySample{
          .time = t0 + static_cast<double>(i + 1) * dt,
          .mirror_displacement = state.mirror_displacement,
          .distance_offset = offset + state.mirror_displacement + drift.value(),
          .smoothed_rate = state.smoothed_rate,
          .error_signal = config.setpoint - state.smoothed_rate,
          .saturated = state.saturated,
      });
    }
  }
  return state;
}

bool on_lock_slope(const FringeModel& fringe, const ServoConfig& config, double z) {
  return fringe.slope(z) * config.sign > 0.0;
}

LockRun run_lock(const FringeModel& fringe, const ServoConfig& config, const DriftConfig& drift,
                 const LockRunOptions& options) {
  config.validate();
  Engine rng = make_stream(options.seed, 0);
  DriftInjector injector(drift);
  LockRun run;
  run.telemetry.reserve(static_cast<std::size_t>(options.duration / config.update_period) + 1);
  const ServoState state =
      evolve_lock(fringe, config, ServoState::initial(0.0, fringe.rate(options.initial_offset)),
                  options.initial_offset, options.duration, injector, rng, &run.telemetry);
  run.lost_lock = state.saturated;
  if (!run.telemetry.empty() &&
      !on_lock_slope(fringe, config, run.telemetry.back().distance_offset)) {
    run.lost_lock = true;
  }
  return run;
}

}  // namespace ionmirror::servo
