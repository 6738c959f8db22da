#pragma once

#include <numbers>

namespace ionmirror {

// CODATA 2018 values; SI throughout.
namespace constants {
inline constexpr double hbar = 1.054571817e-34;          // J s
inline constexpr double planck = 6.62607015e-34;          // J s
inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg
inline constexpr double electron_mass = 9.1093837015e-31;      // kg
inline constexpr double standard_gravity = 9.80665;            // m/s^2
inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Atomic mass of 138Ba in u.
inline constexpr double barium138_amu = 137.905247;
}  // namespace constants

// Boundary conversions. Internal frequencies are angular (rad/s).
namespace units {
constexpr double hz_to_angular(double hz) { return constants::two_pi * hz; }
constexpr double angular_to_hz(double omega) { return omega / constants::two_pi; }
constexpr double mhz_to_angular(double mhz) { return hz_to_angular(mhz * 1e6); }
constexpr double nm(double value) { return value * 1e-9; }
constexpr double to_nm(double metres) { return metres * 1e9; }
constexpr double amu(double value) { return value * constants::atomic_mass_unit; }
constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
}  // namespace units

}  // namespace ionmirror
