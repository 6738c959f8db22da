#pragma once

// Semiclassical 1-D motion of the observed trap mode under the trap, the
// mirror force and laser cooling (viscous damping + velocity diffusion),
// together with the detected photon stream whose rate follows the ion-mirror
// interference fringe. Optionally closed through the fringe-lock servo.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ionmirror/model.hpp"
#include "ionmirror/photon.hpp"
#include "ionmirror/rng.hpp"
#include "ionmirror/servo.hpp"

namespace ionmirror::dynamics {

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minimum steps per trap period allowed by SimParams::validate.
inline constexpr double kMinStepsPerPeriod = 50.0;

struct SimParams {
  double dt = 0.0;                      // s; 0 selects 1 / (100 f_trap)
  double duration = 0.0;                // s
  std::uint64_t seed = 1;
  double projection = 1.0;              // cos(mode angle)
  double cooling_rate = 0.0;            // gamma_c, 1/s
  double diffusion = 0.0;               // D, m^2/s^3: d v = ... + sqrt(2D) dW
  double detection_efficiency = 1.0;    // eta_det in (0, 1]
  double fringe_visibility = -1.0;      // detected fringe contrast; < 0 means epsilon
  double bin_width = 1e-7;              // s
  double mirror_offset = 0.0;           // z0, m (servo displacement adds to it)
  std::size_t record_stride = 0;        // trajectory decimation; 0 = no trajectory
  bool thermal_start = true;            // draw (q, v) from the stationary state

  /// Fills dt when unset. Throws DynamicsError naming the offending field.
  void resolve(const model::IonMirrorSystem& sys);
  void validate(const model::IonMirrorSystem& sys) const;
  double visibility(const model::IonMirrorSystem& sys) const;
};

struct Trajectory {
  std::vector<double> times;        // s
  std::vector<double> positions;    // mode coordinate q, m
  std::vector<double> velocities;   // m/s
  std::vector<double> mirror_path;  // servo displacement + drift, m
};

struct MotionState {
  double q = 0.0;
  double v = 0.0;
};

/// Stochastic splitting integrator for
///   m dv = [-m w^2 q + p F0 cos(2k z_rel) - m gamma v] dt + m sqrt(2D) dW,
///   z_rel = mirror_position + p q,  F0 = P_e hbar k eps Gamma.
/// One step is K(dt/2) R(dt/2) O(dt) R(dt/2) K(dt/2): mirror-force kicks K,
/// exact harmonic rotations R and an exact Ornstein-Uhlenbeck update O of v.
class Stepper {
 public:
  Stepper(const model::IonMirrorSystem& sys, const SimParams& params);

  /// Sets the mirror position entering z_rel (held constant across steps).
  void set_mirror_position(double z);
  double mirror_position() const { return mirror_z_; }

  MotionState step(MotionState state, Engine& rng) const;
  /// In-place step; `accel` carries the mirror acceleration at the current q
  /// in and at the new q out, so each step evaluates the force once.
  void advance(MotionState& state, double& accel, Engine& rng) const;

  /// Mirror-force acceleration on the mode at coordinate q.
  double mirror_acceleration(double q) const;
  /// Phase 2k z_rel at coordinate q.
  double fringe_phase(double q) const { return mirror_phase_ + phase_per_q_ * q; }

  double dt() const { return dt_; }
  double omega() const { return omega_; }
  double stationary_velocity_variance() const;

 private:
  double dt_;
  double omega_;
  double cos_half_;
  double sin_half_;
  double ou_decay_;
  double ou_kick_;
  double kick_scale_;     // p F0 / m, m/s^2
  double phase_per_q_;    // 2 k p
  double wavenumber_;
  double mirror_z_ = 0.0;
  double mirror_phase_ = 0.0;
  double cos_mirror_ = 1.0;
  double sin_mirror_ = 0.0;
  double cooling_rate_;
  double diffusion_;
};

/// Free-function form of one integrator step at fixed mirror position.
MotionState step(MotionState state, double mirror_position, const model::IonMirrorSystem& sys,
                 const SimParams& params, Engine& rng);

/// Detected photon rate eta P_e Gamma (1 - V cos(phase)).
double photon_rate(double phase, const model::IonMirrorSystem& sys, const SimParams& params);

/// Closed-loop servo attached to a run.
struct ServoLoop {
  servo::ServoConfig config;
  servo::ServoState state;
  servo::DriftInjector drift;
  std::vector<servo::TelemetrySample> telemetry;
  bool record_telemetry = true;
};

struct RunResult {
  Trajectory trajectory;
  photon::PhotonRecord photons;
  MotionState final_state;
};

/// Integrates one run of `params.duration`, emitting photons by thinning
/// against the fringe rate evaluated along the trajectory. With a servo, the
/// counts of each update window drive servo::update and the mirror moves by
/// the resulting displacement plus injected drift. Deterministic in
/// (params.seed, sys, params, servo).
RunResult simulate_run(const model::IonMirrorSystem& sys, SimParams params,
                       ServoLoop* servo = nullptr,
                       std::optional<MotionState> initial = std::nullopt);

struct CoolingParams {
  double cooling_rate;   // gamma_c, 1/s
  double diffusion;      // D
  double phase_variance; // <(2 k p q)^2> in the stationary state
};

/// Closed-form cooling calibration. gamma_c = 2 pi target_fwhm, so the
/// motional sideband has the requested FWHM. D sets the stationary phase
/// variance s^2 = <(2kpq)^2>; the first-order sideband over the shot-noise
/// floor 2R is R V^2 s^2 exp(-s^2) / (pi FWHM), and s^2 is the small root
/// -W0(-c) of s^2 exp(-s^2) = c with c = (10^(snr/10) - 1) pi FWHM / (R V^2).
/// R is `reference_rate` (counts/s at the slope midpoint).
CoolingParams calibrate_cooling(double target_fwhm_hz, const model::IonMirrorSystem& sys,
                                const SimParams& params, double target_snr_db,
                                double reference_rate);

/// Sideband peak-over-floor ratio predicted for the stationary state.
double predicted_sideband_ratio(double phase_variance, double mean_rate, double visibility,
                                double fwhm_hz);

/// Mean detected rate at the fringe-slope midpoints, eta P_e Gamma.
double midpoint_rate(const model::IonMirrorSystem& sys, const SimParams& params);

/// Fringe seen by the servo: visibility reduced by exp(-s^2/2) for the
/// thermal phase variance s^2 implied by (cooling_rate, diffusion).
servo::FringeModel fringe_model(const model::IonMirrorSystem& sys, const SimParams& params);

/// Stationary phase variance <(2kpq)^2> = (2kp)^2 D / (gamma w^2).
double stationary_phase_variance(const model::IonMirrorSystem& sys, const SimParams& params);

}  // namespace ionmirror::dynamics
