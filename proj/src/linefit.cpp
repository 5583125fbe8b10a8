#include "odmr/linefit.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include <Eigen/Dense>

namespace odmr::linefit {

namespace {
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::vector<DampedLine> fit_damped_lines(const std::vector<double>& samples,
                                         double dt_us, int order,
                                         int pencil_cols) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (!(dt_us > 0.0)) throw std::invalid_argument("fit_damped_lines: dt_us must be > 0");
  if (order < 1) throw std::invalid_argument("fit_damped_lines: order must be >= 1");
  if (n < 2 * (order + 1))
    throw std::invalid_argument("fit_damped_lines: record too short for the order");

  Eigen::Index l = pencil_cols > 0 ? pencil_cols : 3 * order;
  l = std::min<Eigen::Index>(l, n - order - 1);
  l = std::max<Eigen::Index>(l, order);

  // Hankel data matrix and its dominant right singular subspace.
  MatrixXd hankel(n - l, l + 1);
  for (Eigen::Index r = 0; r < n - l; ++r)
    for (Eigen::Index c = 0; c <= l; ++c) hankel(r, c) = samples[r + c];
  Eigen::BDCSVD<MatrixXd> svd(hankel, Eigen::ComputeThinV);
  const MatrixXd v = svd.matrixV().leftCols(order);

  // Shift-invariance of the signal subspace: poles are the eigenvalues of
  // pinv(V[:-1]) * V[1:].
  const MatrixXd v0 = v.topRows(l);
  const MatrixXd v1 = v.bottomRows(l);
  const MatrixXd pencil = v0.colPivHouseholderQr().solve(v1);
  const Eigen::EigenSolver<MatrixXd> eig(pencil);
  const VectorXcd poles = eig.eigenvalues();

  // Residues by linear least squares against the pole Vandermonde basis.
  MatrixXcd vand(n, order);
  for (Eigen::Index c = 0; c < order; ++c) {
    std::complex<double> p = 1.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      vand(r, c) = p;
      p *= poles[c];
    }
  }
  VectorXcd rhs(n);
  for (Eigen::Index r = 0; r < n; ++r) rhs[r] = samples[r];
  const VectorXcd residues = vand.colPivHouseholderQr().solve(rhs);

  // Keep one entry per conjugate pair (poles with non-negative phase).
  std::vector<DampedLine> lines;
  for (Eigen::Index c = 0; c < order; ++c) {
    const double phase = std::arg(poles[c]);
    if (phase < 0.0) continue;
    const double mag = std::abs(poles[c]);
    if (!(mag > 0.0)) continue;
    DampedLine line;
    line.freq_mhz = phase / (kTwoPi * dt_us);
    line.amplitude = std::abs(residues[c]);
    line.decay_per_us = -std::log(mag) / dt_us;
    lines.push_back(line);
  }
  std::sort(lines.begin(), lines.end(),
            [](const DampedLine& a, const DampedLine& b) { return a.amplitude > b.amplitude; });
  return lines;
}

double folded_frequency_mhz(double freq_mhz, double fs_mhz) {
  double r = std::fmod(std::abs(freq_mhz), fs_mhz);
  return std::min(r, fs_mhz - r);
}

double unfold_frequency_mhz(double folded_mhz, double fs_mhz, double near_mhz) {
  double best = folded_mhz;
  double best_dist = std::abs(best - near_mhz);
  const int zone = static_cast<int>(near_mhz / fs_mhz);
  for (int k = std::max(zone - 1, 0); k <= zone + 1; ++k) {
    for (const double cand : {k * fs_mhz + folded_mhz, (k + 1) * fs_mhz - folded_mhz}) {
      const double dist = std::abs(cand - near_mhz);
      if (dist < best_dist) {
        best = cand;
        best_dist = dist;
      }
    }
  }
  return best;
}

}  // namespace odmr::linefit
