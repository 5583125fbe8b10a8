#include "odmr/spin_model.hpp"

#include <cmath>

namespace odmr::spin {

namespace {
constexpr std::complex<double> I{0.0, 1.0};
}

void SpinParams::validate() const {
  if (!(d_mhz > 0.0)) throw std::invalid_argument("SpinParams: d_mhz must be > 0");
  if (!(e_mhz >= 0.0)) throw std::invalid_argument("SpinParams: e_mhz must be >= 0");
  if (!(e_mhz < d_mhz)) throw std::invalid_argument("SpinParams: e_mhz must be < d_mhz");
  if (!(t1_us > 0.0)) throw std::invalid_argument("SpinParams: t1_us must be > 0");
  if (!std::isfinite(d_mhz) || !std::isfinite(e_mhz) || !std::isfinite(g_factor))
    throw std::invalid_argument("SpinParams: non-finite value");
}

const SpinOperators& SpinOperators::get() {
  static const SpinOperators ops = [] {
    SpinOperators o;
    const double s = 1.0 / std::sqrt(2.0);
    o.sx << 0, s, 0,
            s, 0, s,
            0, s, 0;
    o.sy << 0, -I * s, 0,
            I * s, 0, -I * s,
            0, I * s, 0;
    o.sz << 1, 0, 0,
            0, 0, 0,
            0, 0, -1;
    o.identity = Matrix3cd::Identity();
    return o;
  }();
  return ops;
}

HamiltonianMatrix build_hamiltonian(const SpinParams& params, const Vector3d& b_defect_mt) {
  params.validate();
  if (!b_defect_mt.allFinite())
    throw std::invalid_argument("build_hamiltonian: non-finite field component");

  const auto& s = SpinOperators::get();
  const double gamma = params.gamma_mhz_per_mt();
  Matrix3cd h = params.d_mhz * (s.sz * s.sz) +
                params.e_mhz * (s.sx * s.sx - s.sy * s.sy) +
                gamma * (b_defect_mt.x() * s.sx + b_defect_mt.y() * s.sy +
                         b_defect_mt.z() * s.sz);
  // symmetrize away roundoff
  h = 0.5 * (h + h.adjoint()).eval();
  return HamiltonianMatrix{h};
}

std::array<double, 3> eigenfrequencies(const HamiltonianMatrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix3cd> solver(h.h);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigenfrequencies: 3x3 Hermitian diagonalization failed");
  const auto& ev = solver.eigenvalues();  // ascending
  return {ev(2), ev(1), ev(0)};
}

std::array<double, 2> analytic_resonances_z(const SpinParams& params, double b_z_mt) {
  params.validate();
  if (!std::isfinite(b_z_mt))
    throw std::invalid_argument("analytic_resonances_z: non-finite field");
  const double gb = params.gamma_mhz_per_mt() * b_z_mt;
  const double root = std::sqrt(params.e_mhz * params.e_mhz + gb * gb);
  return {params.d_mhz + root, params.d_mhz - root};
}

TransitionFrequencies transition_frequencies(const HamiltonianMatrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix3cd> solver(h.h);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("transition_frequencies: diagonalization failed");
  const auto& ev = solver.eigenvalues();
  const auto& vecs = solver.eigenvectors();

  // |m_s = 0> is the middle basis vector in the (+1, 0, -1) ordering.
  int bright = 0;
  double best = -1.0;
  for (int k = 0; k < 3; ++k) {
    const double overlap = std::norm(vecs(1, k));
    if (overlap > best) {
      best = overlap;
      bright = k;
    }
  }
  TransitionFrequencies out;
  out.ambiguous = !(best > 1.0 / 3.0);

  std::array<double, 2> gaps{};
  int n = 0;
  for (int k = 0; k < 3; ++k)
    if (k != bright) gaps[n++] = std::abs(ev(k) - ev(bright));
  out.nu_high_mhz = std::max(gaps[0], gaps[1]);
  out.nu_low_mhz = std::min(gaps[0], gaps[1]);
  return out;
}

}  // namespace odmr::spin
