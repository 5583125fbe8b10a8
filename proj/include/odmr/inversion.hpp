#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "odmr/lindblad.hpp"

namespace odmr::inv {

using Eigen::Vector3d;

enum class SimMode { fid, cw };

// Forward-simulation settings shared by calibration and probe generation.
struct ForwardSettings {
  SimMode mode = SimMode::fid;
  double t_max_us = 0.25;
  double dt_us = 0.0;  // 0 = auto from the anti-aliasing guard
  int zero_pad = 4;
  spec::FftWindow window = spec::FftWindow::hann;
  Vector3d drive_axis_lab = Vector3d::UnitY();
  // half-width (MHz) of the analysis window about D; 0 = auto from |B|
  double window_halfwidth_mhz = 0.0;
  // Optional parametric refinement of the two line centers (fid mode only):
  // several long, deliberately undersampled records are fitted with a
  // damped-exponential model (linefit.hpp) and the per-rate estimates are
  // combined by consensus.  refine_t_max_us = 0 disables refinement and the
  // centers come from the windowed-FFT peak fit alone.
  double refine_t_max_us = 0.0;
  int refine_order = 40;
  int refine_strides = 3;  // number of distinct undersampling rates
  // cw mode only
  double drive_amplitude_mt = 0.1;
  double settle_time_us = 0.0;  // 0 = 3*T1
  double avg_window_us = 2.0;
  double beta_pl = 0.6;
  std::vector<double> cw_omega_grid_mhz;
};

struct GridSpec {
  std::vector<double> b_mt;         // strictly increasing, >= 0
  std::vector<double> theta_rad;    // strictly increasing in [0, pi]
  std::vector<double> phi_rad;      // strictly increasing in [0, 2pi)
  bool include_amplitudes = false;  // augment peak centers with fitted amplitudes
  ForwardSettings forward;

  void validate() const;
  static GridSpec regular(double b_max_mt, double b_step_mt, double angle_step_rad);
};

struct Fingerprint {
  std::uint64_t seed = 0;
  int n_random = 0;
  int n_aligned = 0;
  std::uint64_t params_hash = 0;
};

// Simulated peak features on a (|B|, theta, phi) grid; the forward surrogate
// for inversion.
struct CalibrationTable {
  std::vector<double> b_mt, theta_rad, phi_rad;
  int feature_dim = 4;
  // row-major [ib][it][ip], NaN-filled cells are failed forward runs
  std::vector<double> features;
  // per-feature misfit scale (same units as the feature); empty falls back
  // to the table-wide standard deviation of each feature
  std::vector<double> feature_sigma;
  Fingerprint fingerprint;

  std::size_t cell_index(std::size_t ib, std::size_t it, std::size_t ip) const;
  const double* cell(std::size_t ib, std::size_t it, std::size_t ip) const;
  bool cell_valid(std::size_t ib, std::size_t it, std::size_t ip) const;

  std::string to_json() const;
  static CalibrationTable from_json(const std::string& text);
};

struct FieldEstimate {
  Vector3d b_lab_mt = Vector3d::Zero();
  double b_mag_mt = 0.0;
  double theta_rad = 0.0;
  double phi_rad = 0.0;
  double residual = 0.0;  // weighted feature-space misfit
  bool sign_degenerate = true;        // B <-> -B, always present
  bool azimuth_indeterminate = false; // features insensitive to phi
  bool direction_indeterminate = false;  // |B| below grid resolution
  // enumerated spectrum-equivalent solutions: all sign reflections of the
  // field components about the alignment frame (at minimum -B)
  std::vector<Vector3d> equivalent_fields_mt;
};

class NoConfidentEstimate : public std::runtime_error {
 public:
  NoConfidentEstimate(std::string msg, FieldEstimate best)
      : std::runtime_error(std::move(msg)), best_candidate(std::move(best)) {}
  FieldEstimate best_candidate;
};

// Feature vector of a single forward run:
//   [c_hi, c_lo, (a_hi, a_lo,) w_hi, w_lo]
// c_hi/c_lo are the two dominant line centers (descending), refined
// parametrically when ForwardSettings::refine_t_max_us > 0; a_hi/a_lo their
// amplitudes when requested; w_hi/w_lo the amplitude-weighted RMS spreads of
// the spectrum above and below D, each about its own branch centroid.  The
// centers track the field projection seen by the aligned sub-ensemble, the
// branch spreads track |B| through the orientation-averaged powder
// broadening, making (|B|, theta) jointly identifiable.
std::vector<double> forward_features(const std::vector<orient::DefectOrientation>& ensemble,
                                     const spin::SpinParams& params, const Vector3d& b_lab_mt,
                                     const ForwardSettings& fwd, bool include_amplitudes);

// Ranked feature-vector hypotheses for a probe measurement.  When the
// parametric refinement cannot uniquely attribute a line (a background line
// of the random sub-ensemble can rival the aligned line), the runners-up are
// returned as alternative hypotheses; the inversion prefers the earliest
// hypothesis that matches the table acceptably.  candidates[0] is the
// best-scoring hypothesis and always present.
std::vector<std::vector<double>> probe_feature_candidates(
    const std::vector<orient::DefectOrientation>& ensemble, const spin::SpinParams& params,
    const Vector3d& b_lab_mt, const ForwardSettings& fwd, bool include_amplitudes);

CalibrationTable build_calibration(const std::vector<orient::DefectOrientation>& ensemble,
                                   const spin::SpinParams& params, const GridSpec& grid,
                                   const Fingerprint& fingerprint);

struct InvertOptions {
  double residual_threshold = 1e9;  // weighted units; above -> NoConfidentEstimate
  // multi-hypothesis selection: the highest-ranked hypothesis with a
  // residual <= hypothesis_accept wins; only when every hypothesis exceeds
  // the bound does the smallest residual decide
  double hypothesis_accept = 2.0;
};

FieldEstimate invert_field(const std::vector<double>& observed_features,
                           const CalibrationTable& table, const InvertOptions& opt = {});

// Multi-hypothesis inversion: returns the estimate of the first hypothesis
// whose residual clears the acceptance bound (falling back to the smallest
// residual when none does).
FieldEstimate invert_field(const std::vector<std::vector<double>>& feature_candidates,
                           const CalibrationTable& table, const InvertOptions& opt = {});

std::uint64_t hash_params(const spin::SpinParams& params);

}  // namespace odmr::inv
