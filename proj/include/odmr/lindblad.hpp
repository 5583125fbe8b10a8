#pragma once

#include <optional>

#include "odmr/orientation.hpp"
#include "odmr/spectrum.hpp"
#include "odmr/spin_model.hpp"
#include "odmr/trajectory.hpp"

namespace odmr::lind {

using orient::DefectOrientation;
using spin::SpinParams;

// Integrates drho/dt = -i 2pi [H_t, rho] + Gamma/2 (2 Sx rho Sx - Sx^2 rho - rho Sx^2)
// in the defect frame, Gamma = 1/t1_us, Sx the defect-frame spin-1 operator.
//
// The undriven (or zero-amplitude) generator is time-independent; it is
// stepped with the exact matrix-exponential propagator exp(dt*L).  The
// driven case integrates the lab-frame cosine drive with fixed-step RK4.
// Both paths enforce the anti-aliasing guard dt <= 1/(20*f_max) with f_max
// the Hamiltonian eigenvalue span plus the drive frequency.
//
// diag_stride > 0 samples conservation diagnostics every that many steps.
TrajectoryRecord evolve(const Matrix3cd& rho0, const SpinParams& params,
                        const Vector3d& b_lab_mt, const DefectOrientation& o,
                        const std::optional<DriveParams>& drive, double t_max_us,
                        double dt_us, const Observable& observable,
                        int diag_stride = 0);

// Ensemble-averaged free-induction-decay signal: each defect starts from an
// instantaneous pi/4 rotation of |0><0| about the defect-frame projection of
// the lab drive axis (the spin-1 rotation angle that maximizes the 0 <-> +-1
// coherences; a pi/2 rotation would empty |0> entirely), evolves undriven
// with Gamma = 1/T1, and contributes the spin expectation along that same
// axis, weight-averaged in ensemble order.
TrajectoryRecord fid_signal(const std::vector<DefectOrientation>& ensemble,
                            const SpinParams& params, const Vector3d& b_lab_mt,
                            double t_max_us, double dt_us,
                            const Vector3d& drive_axis_lab = Vector3d::UnitY());

// Same FID as fid_signal, but sampled at an arbitrary (typically coarse)
// spacing with the anti-aliasing guard disabled.  The undriven propagator is
// an exact matrix exponential, so samples are exact at any spacing; the
// deliberately folded (aliased) record is meant for parametric line
// estimation (see linefit.hpp), never for FFT spectra.
TrajectoryRecord fid_signal_undersampled(
    const std::vector<DefectOrientation>& ensemble, const SpinParams& params,
    const Vector3d& b_lab_mt, double t_max_us, double dt_us,
    const Vector3d& drive_axis_lab = Vector3d::UnitY());

// Swept-drive steady-state ODMR: for each drive frequency, evolve the pumped
// state |0><0| under the cosine drive for settle_time, time-average the PL
// proxy over avg_window, ensemble-average, and convert to contrast
// (PL_off - PL_on)/PL_off against the zero-amplitude baseline.
spec::Spectrum cw_sweep(const std::vector<DefectOrientation>& ensemble,
                        const SpinParams& params, const Vector3d& b_lab_mt,
                        double drive_amplitude_mt,
                        const std::vector<double>& omega_grid_mhz,
                        double settle_time_us, double avg_window_us, double dt_us,
                        double beta_pl = 0.6,
                        const Vector3d& drive_axis_lab = Vector3d::UnitY());

// Throws std::invalid_argument unless rho is Hermitian (1e-10), unit trace
// (1e-10) and positive semidefinite (eigenvalues >= -1e-9).
void validate_density(const Matrix3cd& rho);

// exp(-i theta n.S) applied to |0><0|; the FID preparation pulse.
Matrix3cd rotated_ms0_state(const Vector3d& axis_defect, double theta_rad);

}  // namespace odmr::lind
