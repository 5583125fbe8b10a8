#include "odmr/lindblad.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

#include "odmr/units.hpp"

namespace odmr::lind {

namespace {

constexpr std::complex<double> I{0.0, 1.0};

using Mat9 = Eigen::Matrix<std::complex<double>, 9, 9>;
using Vec9 = Eigen::Matrix<std::complex<double>, 9, 1>;

Mat9 kron3(const Matrix3cd& a, const Matrix3cd& b) {
  Mat9 out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out.block<3, 3>(3 * i, 3 * j) = a(i, j) * b;
  return out;
}

Vec9 vectorize(const Matrix3cd& rho) {
  return Eigen::Map<const Vec9>(rho.data());  // column-major
}

Matrix3cd unvectorize(const Vec9& v) {
  return Eigen::Map<const Matrix3cd>(v.data());
}

// vec(A X B) = kron(B^T, A) vec(X); commutator and dissipator superoperators
Mat9 static_liouvillian(const Matrix3cd& h_mhz, double gamma_per_us) {
  const auto& s = spin::SpinOperators::get();
  const Matrix3cd id = Matrix3cd::Identity();
  const Matrix3cd sx2 = s.sx * s.sx;
  Mat9 l = -I * units::two_pi *
           (kron3(id, h_mhz) - kron3(h_mhz.transpose(), id));
  l += 0.5 * gamma_per_us *
       (2.0 * kron3(s.sx.transpose(), s.sx) - kron3(id, sx2) -
        kron3(sx2.transpose(), id));
  return l;
}

Mat9 drive_liouvillian(const Matrix3cd& drive_op_mhz) {
  const Matrix3cd id = Matrix3cd::Identity();
  return -I * units::two_pi *
         (kron3(id, drive_op_mhz) - kron3(drive_op_mhz.transpose(), id));
}

Matrix3cd axis_operator(const Vector3d& axis) {
  const auto& s = spin::SpinOperators::get();
  return axis.x() * s.sx + axis.y() * s.sy + axis.z() * s.sz;
}

Matrix3cd observable_matrix(const Observable& obs) {
  Matrix3cd m = Matrix3cd::Zero();
  switch (obs.kind) {
    case ObservableKind::pl_proxy:
      m(0, 0) = obs.beta;
      m(1, 1) = 1.0;
      m(2, 2) = obs.beta;
      break;
    case ObservableKind::spin_axis:
      m = axis_operator(obs.axis_defect.normalized());
      break;
    case ObservableKind::population0:
      m(1, 1) = 1.0;
      break;
  }
  return m;
}

struct DiagState {
  double purity0 = 0.0;
  Diagnostics diag;

  void sample(const Matrix3cd& rho) {
    diag.sampled = true;
    diag.max_trace_dev = std::max(diag.max_trace_dev, std::abs(rho.trace().real() - 1.0) +
                                                          std::abs(rho.trace().imag()));
    const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    diag.max_herm_dev = std::max(diag.max_herm_dev, herm);
    const Matrix3cd sym = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix3cd> es(sym, Eigen::EigenvaluesOnly);
    diag.min_eigenvalue = std::min(diag.min_eigenvalue, es.eigenvalues().minCoeff());
    const double purity = (rho * rho).trace().real();
    diag.max_purity_dev = std::max(diag.max_purity_dev, std::abs(purity - purity0));
  }
};

void rehermitize(Vec9& v) {
  Matrix3cd rho = unvectorize(v);
  rho = 0.5 * (rho + rho.adjoint()).eval();
  v = vectorize(rho);
}

}  // namespace

void DriveParams::validate() const {
  if (!(b_mw_mt >= 0.0) || !std::isfinite(b_mw_mt))
    throw std::invalid_argument("DriveParams: b_mw_mt must be >= 0");
  if (!(omega_mhz > 0.0) || !std::isfinite(omega_mhz))
    throw std::invalid_argument("DriveParams: omega_mhz must be > 0");
  if (!axis_lab.allFinite() || axis_lab.norm() < 1e-12)
    throw std::invalid_argument("DriveParams: invalid drive axis");
}

void validate_density(const Matrix3cd& rho) {
  if (!rho.allFinite()) throw std::invalid_argument("density matrix: non-finite entry");
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("density matrix: not Hermitian");
  if (std::abs(rho.trace() - std::complex<double>(1.0)) > 1e-10)
    throw std::invalid_argument("density matrix: trace != 1");
  Eigen::SelfAdjointEigenSolver<Matrix3cd> es(0.5 * (rho + rho.adjoint()),
                                              Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9)
    throw std::invalid_argument("density matrix: negative eigenvalue");
}

Matrix3cd rotated_ms0_state(const Vector3d& axis_defect, double theta_rad) {
  const Matrix3cd sn = axis_operator(axis_defect.normalized());
  Eigen::SelfAdjointEigenSolver<Matrix3cd> es(sn);
  Eigen::Vector3cd phases;
  for (int k = 0; k < 3; ++k) phases(k) = std::exp(-I * theta_rad * es.eigenvalues()(k));
  const Matrix3cd u = es.eigenvectors() * phases.asDiagonal() *
                      es.eigenvectors().adjoint();
  Matrix3cd p0 = Matrix3cd::Zero();
  p0(1, 1) = 1.0;  // |m_s = 0>
  Matrix3cd rho = u * p0 * u.adjoint();
  return 0.5 * (rho + rho.adjoint()).eval();
}

static TrajectoryRecord evolve_core(const Matrix3cd& rho0, const SpinParams& params,
                                    const Vector3d& b_lab_mt, const DefectOrientation& o,
                                    const std::optional<DriveParams>& drive,
                                    double t_max_us, double dt_us,
                                    const Observable& observable, int diag_stride,
                                    bool enforce_alias_guard) {
  validate_density(rho0);
  params.validate();
  if (drive) drive->validate();
  if (!(t_max_us > 0.0) || !(dt_us > 0.0))
    throw std::invalid_argument("evolve: t_max_us and dt_us must be > 0");

  const Vector3d b_defect = orient::lab_to_defect(o, b_lab_mt);
  const auto h = spin::build_hamiltonian(params, b_defect);
  const auto eigs = spin::eigenfrequencies(h);
  const bool driven = drive.has_value() && drive->b_mw_mt > 0.0;
  const double f_max = (eigs[0] - eigs[2]) + (driven ? drive->omega_mhz : 0.0);
  const double dt_limit = 1.0 / (20.0 * f_max);
  if ((enforce_alias_guard || driven) && dt_us > dt_limit) {
    std::ostringstream msg;
    msg << "evolve: dt_us = " << dt_us << " exceeds the anti-aliasing guard "
        << dt_limit << " us for f_max = " << f_max << " MHz";
    throw std::invalid_argument(msg.str());
  }

  const double gamma = 1.0 / params.t1_us;
  const Mat9 l0 = static_liouvillian(h.h, gamma);

  const auto n_steps = static_cast<std::size_t>(std::llround(t_max_us / dt_us));
  if (n_steps < 1) throw std::invalid_argument("evolve: t_max_us shorter than one step");

  TrajectoryRecord rec;
  rec.kind = observable.kind;
  rec.times_us.resize(n_steps + 1);
  rec.signals.resize(n_steps + 1);

  const Vec9 w = vectorize(observable_matrix(observable).transpose().eval());
  Vec9 v = vectorize(rho0);

  DiagState ds;
  ds.purity0 = (rho0 * rho0).trace().real();
  constexpr std::size_t reherm_stride = 256;

  auto record = [&](std::size_t idx) {
    rec.times_us[idx] = static_cast<double>(idx) * dt_us;
    rec.signals[idx] = (w.transpose() * v)(0).real();
    if (diag_stride > 0 && idx % static_cast<std::size_t>(diag_stride) == 0)
      ds.sample(unvectorize(v));
  };

  if (!driven) {
    const Mat9 prop = (dt_us * l0).exp();
    for (std::size_t idx = 0; idx <= n_steps; ++idx) {
      record(idx);
      if (idx < n_steps) {
        v = prop * v;
        if ((idx + 1) % reherm_stride == 0) rehermitize(v);
      }
    }
  } else {
    const Matrix3cd drive_op =
        params.gamma_mhz_per_mt() * drive->b_mw_mt *
        axis_operator(orient::lab_to_defect(o, drive->axis_lab.normalized()));
    const Mat9 lc = drive_liouvillian(drive_op);
    const double w_ang = units::two_pi * drive->omega_mhz;
    auto rhs = [&](double t, const Vec9& x) -> Vec9 {
      return l0 * x + std::cos(w_ang * t) * (lc * x);
    };
    for (std::size_t idx = 0; idx <= n_steps; ++idx) {
      record(idx);
      if (idx < n_steps) {
        const double t = static_cast<double>(idx) * dt_us;
        const Vec9 k1 = rhs(t, v);
        const Vec9 k2 = rhs(t + 0.5 * dt_us, v + 0.5 * dt_us * k1);
        const Vec9 k3 = rhs(t + 0.5 * dt_us, v + 0.5 * dt_us * k2);
        const Vec9 k4 = rhs(t + dt_us, v + dt_us * k3);
        v += (dt_us / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if ((idx + 1) % reherm_stride == 0) rehermitize(v);
      }
    }
  }

  rec.diagnostics = ds.diag;
  return rec;
}

TrajectoryRecord evolve(const Matrix3cd& rho0, const SpinParams& params,
                        const Vector3d& b_lab_mt, const DefectOrientation& o,
                        const std::optional<DriveParams>& drive, double t_max_us,
                        double dt_us, const Observable& observable,
                        int diag_stride) {
  return evolve_core(rho0, params, b_lab_mt, o, drive, t_max_us, dt_us, observable,
                     diag_stride, /*enforce_alias_guard=*/true);
}

static TrajectoryRecord fid_average(const std::vector<DefectOrientation>& ensemble,
                                    const SpinParams& params, const Vector3d& b_lab_mt,
                                    double t_max_us, double dt_us,
                                    const Vector3d& drive_axis_lab,
                                    bool enforce_alias_guard) {
  if (ensemble.empty()) throw std::invalid_argument("fid_signal: empty ensemble");

  TrajectoryRecord avg;
  double total_weight = 0.0;
  for (const auto& o : ensemble) {
    const Vector3d axis = orient::lab_to_defect(o, drive_axis_lab.normalized());
    // A full pi/2 spin-1 rotation empties |0> (cos(pi/2) = 0) and leaves only
    // a double-quantum coherence; pi/4 maximizes the 0 <-> +-1 coherences that
    // carry the resonance frequencies.
    const Matrix3cd rho0 = rotated_ms0_state(axis, 0.25 * M_PI);
    const auto rec = evolve_core(rho0, params, b_lab_mt, o, std::nullopt, t_max_us,
                                 dt_us, Observable::spin(axis), 0, enforce_alias_guard);
    if (avg.signals.empty()) {
      avg = rec;
      avg.signals.assign(rec.signals.size(), 0.0);
    }
    for (std::size_t i = 0; i < rec.signals.size(); ++i)
      avg.signals[i] += o.weight * rec.signals[i];
    total_weight += o.weight;
  }
  for (auto& s : avg.signals) s /= total_weight;
  return avg;
}

TrajectoryRecord fid_signal(const std::vector<DefectOrientation>& ensemble,
                            const SpinParams& params, const Vector3d& b_lab_mt,
                            double t_max_us, double dt_us,
                            const Vector3d& drive_axis_lab) {
  return fid_average(ensemble, params, b_lab_mt, t_max_us, dt_us, drive_axis_lab,
                     /*enforce_alias_guard=*/true);
}

TrajectoryRecord fid_signal_undersampled(const std::vector<DefectOrientation>& ensemble,
                                         const SpinParams& params,
                                         const Vector3d& b_lab_mt, double t_max_us,
                                         double dt_us, const Vector3d& drive_axis_lab) {
  return fid_average(ensemble, params, b_lab_mt, t_max_us, dt_us, drive_axis_lab,
                     /*enforce_alias_guard=*/false);
}

spec::Spectrum cw_sweep(const std::vector<DefectOrientation>& ensemble,
                        const SpinParams& params, const Vector3d& b_lab_mt,
                        double drive_amplitude_mt,
                        const std::vector<double>& omega_grid_mhz,
                        double settle_time_us, double avg_window_us, double dt_us,
                        double beta_pl, const Vector3d& drive_axis_lab) {
  if (ensemble.empty()) throw std::invalid_argument("cw_sweep: empty ensemble");
  if (omega_grid_mhz.empty()) throw std::invalid_argument("cw_sweep: empty frequency grid");
  for (std::size_t i = 1; i < omega_grid_mhz.size(); ++i)
    if (!(omega_grid_mhz[i] > omega_grid_mhz[i - 1]))
      throw std::invalid_argument("cw_sweep: frequency grid must be strictly increasing");
  if (!(settle_time_us >= 3.0 * params.t1_us))
    throw std::invalid_argument("cw_sweep: settle_time_us must be >= 3*T1");
  if (!(drive_amplitude_mt >= 0.0))
    throw std::invalid_argument("cw_sweep: negative drive amplitude");

  const double t_total = settle_time_us + avg_window_us;
  Matrix3cd rho0 = Matrix3cd::Zero();
  rho0(1, 1) = 1.0;  // optically pumped |0><0| in the defect frame
  const Observable obs = Observable::pl(beta_pl);

  auto window_mean = [&](const TrajectoryRecord& rec) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rec.times_us.size(); ++i) {
      if (rec.times_us[i] >= settle_time_us) {
        sum += rec.signals[i];
        ++n;
      }
    }
    return sum / static_cast<double>(n);
  };

  double total_weight = 0.0;
  double pl_off = 0.0;
  std::vector<double> pl_on(omega_grid_mhz.size(), 0.0);
  for (const auto& o : ensemble) {
    const auto rec_off =
        evolve(rho0, params, b_lab_mt, o, std::nullopt, t_total, dt_us, obs);
    pl_off += o.weight * window_mean(rec_off);
    for (std::size_t k = 0; k < omega_grid_mhz.size(); ++k) {
      if (drive_amplitude_mt == 0.0) {
        pl_on[k] += o.weight * window_mean(rec_off);
        continue;
      }
      DriveParams drive;
      drive.b_mw_mt = drive_amplitude_mt;
      drive.omega_mhz = omega_grid_mhz[k];
      drive.axis_lab = drive_axis_lab;
      const auto rec =
          evolve(rho0, params, b_lab_mt, o, drive, t_total, dt_us, obs);
      pl_on[k] += o.weight * window_mean(rec);
    }
    total_weight += o.weight;
  }
  pl_off /= total_weight;

  spec::Spectrum out;
  out.kind = spec::SpectrumKind::odmr_contrast;
  out.source = "cw-sweep";
  out.freqs_mhz = omega_grid_mhz;
  out.values.resize(omega_grid_mhz.size());
  for (std::size_t k = 0; k < omega_grid_mhz.size(); ++k)
    out.values[k] = (pl_off - pl_on[k] / total_weight) / pl_off;
  return out;
}

}  // namespace odmr::lind
