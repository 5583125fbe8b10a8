#pragma once

// Internal unit system: frequency in MHz (energies divided by h), time in
// microseconds, magnetic field in mT.  A Hamiltonian entry of f MHz produces
// phase evolution e^{-i 2*pi f t} for t in microseconds; the 2*pi lives only
// inside the dynamics integrator.

namespace odmr::units {

inline constexpr double two_pi = 6.283185307179586476925286766559;

// Bohr magneton over Planck constant, CODATA, in MHz per mT.
inline constexpr double mu_b_mhz_per_mt = 13.9962;

}  // namespace odmr::units
