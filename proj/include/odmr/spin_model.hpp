#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>

#include "odmr/units.hpp"

namespace odmr::spin {

using Eigen::Matrix3cd;
using Eigen::Vector3d;

// Ground-state spin parameters of a spin-1 defect, frequency units (MHz).
struct SpinParams {
  double d_mhz = 3480.0;   // longitudinal ZFS D/h
  double e_mhz = 60.0;     // transverse ZFS E/h
  double g_factor = 2.0;   // Lande g
  double t1_us = 14.0;     // longitudinal relaxation time

  // gyromagnetic ratio g*mu_B/h in MHz/mT, always derived
  double gamma_mhz_per_mt() const { return g_factor * units::mu_b_mhz_per_mt; }

  void validate() const;
};

// Spin-1 operators in the m_s = (+1, 0, -1) basis.  S_z is diagonal
// diag(1, 0, -1); all three are Hermitian and satisfy [S_x,S_y] = i S_z.
struct SpinOperators {
  Matrix3cd sx, sy, sz, identity;
  static const SpinOperators& get();
};

// 3x3 Hermitian Hamiltonian, entries in MHz, expressed in the defect
// principal frame (Z = quantization axis, X = transverse E-axis).
struct HamiltonianMatrix {
  Matrix3cd h;
};

// H = D S_z^2 + E (S_x^2 - S_y^2) + g mu_B S.B, with B in the defect frame.
HamiltonianMatrix build_hamiltonian(const SpinParams& params, const Vector3d& b_defect_mt);

// Real eigenvalues of a Hermitian 3x3, descending.
std::array<double, 3> eigenfrequencies(const HamiltonianMatrix& h);

// Closed-form resonances for B strictly along the defect z-axis:
// nu_{1,2} = D/h +- sqrt((E/h)^2 + (gamma B_z)^2).  Returned descending.
std::array<double, 2> analytic_resonances_z(const SpinParams& params, double b_z_mt);

// Transition frequencies from the "bright" eigenstate (maximal overlap with
// |m_s = 0>) to the other two eigenstates, descending.  `ambiguous` is set
// when no eigenstate has overlap > 1/3 with |0> (strongly mixed regime); the
// frequencies are still reported but should not be trusted for labeling.
struct TransitionFrequencies {
  double nu_high_mhz = 0.0;
  double nu_low_mhz = 0.0;
  bool ambiguous = false;
};
TransitionFrequencies transition_frequencies(const HamiltonianMatrix& h);

}  // namespace odmr::spin
