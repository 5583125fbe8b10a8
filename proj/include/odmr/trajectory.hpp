#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

namespace odmr::lind {

using Eigen::Matrix3cd;
using Eigen::Vector3d;

enum class ObservableKind { pl_proxy, spin_axis, population0 };

// What gets recorded at every integration step.
//   pl_proxy:    p0 + beta*(p+1 + p-1), a phenomenological PL stand-in
//                (m_s = +-1 are dimmer through the ISC channel)
//   spin_axis:   Re tr(rho * n.S) for a defect-frame unit axis n
//   population0: <0|rho|0>
struct Observable {
  ObservableKind kind = ObservableKind::population0;
  double beta = 0.6;                        // pl_proxy only
  Vector3d axis_defect = Vector3d::UnitZ(); // spin_axis only

  static Observable pl(double beta) { return {ObservableKind::pl_proxy, beta, Vector3d::UnitZ()}; }
  static Observable spin(const Vector3d& axis) { return {ObservableKind::spin_axis, 0.0, axis}; }
  static Observable population() { return {}; }
};

// Cosine microwave drive, lab frame.  H_t = H + gamma * b_mw * cos(2 pi omega t) * (axis.S)
struct DriveParams {
  double b_mw_mt = 0.1;
  double omega_mhz = 3480.0;
  Vector3d axis_lab = Vector3d::UnitY();

  void validate() const;
};

// Sampled conservation checks along a trajectory (enabled via diag_stride).
struct Diagnostics {
  double max_trace_dev = 0.0;
  double max_herm_dev = 0.0;
  double min_eigenvalue = 1.0;
  double max_purity_dev = 0.0;  // |tr(rho^2) - tr(rho0^2)|, meaningful when unitary
  bool sampled = false;
};

struct TrajectoryRecord {
  std::vector<double> times_us;
  std::vector<double> signals;
  ObservableKind kind = ObservableKind::population0;
  Diagnostics diagnostics;
};

}  // namespace odmr::lind
