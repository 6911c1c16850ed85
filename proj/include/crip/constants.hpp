#pragma once

/**
 * @file constants.hpp
 * @brief Physical constants and the unit conventions used throughout crip.
 *
 * Internal units: lengths in nm, times in s, rates in 1/s, fields in T.
 * Gyromagnetic ratios and spectroscopic frequencies are stored in cycles
 * (Hz/T and Hz). Couplings and detunings enter rate formulas in rad/s; the
 * only cycles-to-radians conversion lives in angular().
 */

#include <numbers>

namespace crip::constants {

inline constexpr double pi = std::numbers::pi_v<double>;

/// h [J s]
inline constexpr double planck = 6.626'070'15e-34;
/// hbar [J s]
inline constexpr double hbar = planck / (2.0 * pi);
/// k_B [J/K]
inline constexpr double boltzmann = 1.380'649e-23;
/// mu_0 / 4 pi [T m / A]
inline constexpr double mu0_over_4pi = 1.000'000'000'55e-7;
/// N_A [1/mol]
inline constexpr double avogadro = 6.022'140'76e23;

inline constexpr double nm3_per_m3 = 1e27;
inline constexpr double nm3_per_litre = 1e24;
inline constexpr double nm2_per_cm2 = 1e14;
inline constexpr double nm2_per_mm2 = 1e12;
inline constexpr double nm_per_um = 1e3;
inline constexpr double nm3_per_ul = 1e18;
inline constexpr double gauss_per_tesla = 1e4;

// NV defaults
inline constexpr double nv_zero_field_splitting = 2.870e9;  // Hz
inline constexpr double nv_gyromagnetic_ratio = 28.024'95e9;  // Hz/T

inline constexpr double gamma_1h = 42.5775e6;     // Hz/T
inline constexpr double gamma_13c = 10.7084e6;    // Hz/T
inline constexpr double gamma_15n = -4.3163e6;    // Hz/T

}  // namespace crip::constants

namespace crip {

/// Cycles to radians: Hz -> rad/s (or Hz/T -> rad/s/T).
constexpr double angular(double cycles) { return 2.0 * constants::pi * cycles; }

}  // namespace crip
