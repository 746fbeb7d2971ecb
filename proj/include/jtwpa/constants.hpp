#pragma once

#include <numbers>

namespace jtwpa::constants {

/// Magnetic flux quantum h/2e (CODATA 2018, exact), Wb.
inline constexpr double flux_quantum = 2.067833848461929e-15;
/// Vacuum permittivity (CODATA 2018), F/m.
inline constexpr double vacuum_permittivity = 8.8541878128e-12;
/// Reduced flux quantum Phi0 / 2pi, Wb.
inline constexpr double reduced_flux_quantum = flux_quantum / (2.0 * std::numbers::pi);

inline constexpr double micro = 1e-6;
inline constexpr double nano = 1e-9;
inline constexpr double um2 = 1e-12; // m^2 per um^2
inline constexpr double giga = 1e9;
inline constexpr double mega = 1e6;

} // namespace jtwpa::constants
