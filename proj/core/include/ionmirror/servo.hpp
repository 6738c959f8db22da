#pragma once

// Mirror-position fringe lock: an integrating servo that holds the mean
// photon count rate at a setpoint on one slope of the interference fringe by
// moving the mirror (PZT). Includes the drift injector used to stress it and
// a servo-only fringe simulator for lock studies.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ionmirror/rng.hpp"

namespace ionmirror::servo {

class ServoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Slope { positive, negative };

inline int slope_sign(Slope s) { return s == Slope::positive ? +1 : -1; }

/// Mean detected rate versus mirror phase phi = 2kz:
///   R(phi) = mean_rate * (1 - visibility * cos(phi)).
/// `visibility` is the effective (motion-averaged) fringe contrast.
struct FringeModel {
  double mean_rate;    // counts/s at the slope midpoints
  double visibility;   // in (0, 1]
  double wavenumber;   // k = 2 pi / lambda, 1/m

  double rate(double z) const;
  /// dR/dz at mirror position z, counts/s per m.
  double slope(double z) const;
  /// |dR/dz| at a slope midpoint: 2 k mean_rate visibility.
  double midpoint_slope() const;
  /// Fringe amplitude mean_rate * visibility.
  double amplitude() const { return mean_rate * visibility; }
  /// Mirror position (within [order*lambda/2, (order+1)*lambda/2)) at which
  /// the rate equals `setpoint` on the requested slope. Throws ServoError if
  /// the setpoint lies at or beyond the fringe extremes.
  double lock_position(double setpoint, Slope slope, int order = 0) const;
};

struct ServoConfig {
  double gain = 0.0;                 // m per (counts/s) per s
  int sign = +1;                     // slope selector, +-1
  double setpoint = 0.0;             // counts/s
  double integration_time = 1.0;     // s
  double smoothing_window = 0.1;     // s, exponential rate-estimator time constant
  double actuator_range = 1e-5;      // m, |u| limit
  double update_period = 1e-3;       // s

  void validate() const;
};

/// Integrator gain for which a full-scale error (one fringe amplitude)
/// drives the mirror across one fringe slope (lambda/4) in one integration
/// time. The linearised closed loop then has time constant
/// integration_time / pi.
double nominal_gain(const FringeModel& fringe, double integration_time);

/// Closed-loop time constant 1 / (gain * fringe_slope) of the linearised loop.
double loop_time_constant(const ServoConfig& config, double fringe_slope);

/// Largest stable gain for the linearised discrete loop:
/// gain * slope * update_period < 4/alpha - 2, alpha = 1 - exp(-T/tau_s).
/// Reduces to gain * slope * update_period < 2 without smoothing.
double stability_limit_gain(const ServoConfig& config, double fringe_slope);

/// Smoothing coefficient alpha of the exponential rate estimator.
double smoothing_alpha(const ServoConfig& config);

struct ServoState {
  double mirror_displacement = 0.0;  // u, m
  double smoothed_rate = 0.0;        // counts/s
  bool locked = true;
  bool saturated = false;

  static ServoState initial(double displacement, double rate_estimate);
};

/// One servo update after a window of length dt containing `counts` photons:
///   r <- r + alpha (counts/dt - r)
///   u <- clamp(u + sign * gain * (setpoint - r) * dt)
/// Clamping sets `saturated` and clears `locked`.
ServoState update(const ServoState& state, std::uint64_t counts, const ServoConfig& config,
                  double dt);

/// Returns `config` with the sign that gives negative feedback on `slope`.
ServoConfig select_slope(ServoConfig config, Slope slope);

struct DriftConfig {
  double linear_rate = 0.0;       // m/s
  double sine_amplitude = 0.0;    // m
  double sine_frequency = 0.0;    // Hz
  double random_walk = 0.0;       // m / sqrt(s)
};

/// Injected ion-mirror distance drift: linear ramp + sinusoid + random walk.
class DriftInjector {
 public:
  DriftInjector() = default;
  explicit DriftInjector(DriftConfig config) : config_(config) {}

  /// Advances the random walk by dt and returns the total drift at the new time.
  double advance(double dt, Engine& rng);
  double value() const { return value_; }
  double time() const { return t_; }
  const DriftConfig& config() const { return config_; }

 private:
  DriftConfig config_{};
  double t_ = 0.0;
  double walk_ = 0.0;
  double value_ = 0.0;
};

struct TelemetrySample {
  double time;
  double mirror_displacement;   // u
  double distance_offset;       // z_rel slow part: offset + u + drift
  double smoothed_rate;
  double error_signal;          // setpoint - smoothed_rate
  bool saturated;
};

/// RMS (nm) of the slow component of the ion-mirror distance about its mean.
/// The slow component is a centred moving average of length 10 ms (100 Hz).
/// Throws ServoError when the record spans less than `window`, or when
/// `window` is shorter than 10 integration times.
double lock_quality(std::span<const TelemetrySample> telemetry, double window,
                    double integration_time);

struct LockRunOptions {
  double duration = 100.0;         // s
  double initial_offset = 0.0;     // mirror position z0 (u = 0), m
  std::uint64_t seed = 1;
};

struct LockRun {
  std::vector<TelemetrySample> telemetry;
  bool lost_lock = false;
};

/// Servo-only loop: Poisson counts from the fringe model at
/// offset + u + drift in every update window, fed back through `update`, for
/// `duration`. Appends telemetry (times from t0) when requested.
ServoState evolve_lock(const FringeModel& fringe, const ServoConfig& config, ServoState state,
                       double offset, double duration, DriftInjector& drift, Engine& rng,
                       std::vector<TelemetrySample>* telemetry = nullptr, double t0 = 0.0);

/// True when the fringe slope at z gives negative feedback for config.sign.
bool on_lock_slope(const FringeModel& fringe, const ServoConfig& config, double z);

/// Servo-only simulation: Poisson counts from the fringe model at the
/// current distance z0 + u + drift in every update window, fed back through
/// `update`. No ion motion (the fringe model already carries its average).
LockRun run_lock(const FringeModel& fringe, const ServoConfig& config, const DriftConfig& drift,
                 const LockRunOptions& options);

}  // namespace ionmirror::servo
