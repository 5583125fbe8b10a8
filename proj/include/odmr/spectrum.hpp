#pragma once

#include <string>
#include <vector>

#include "odmr/trajectory.hpp"

namespace odmr::spec {

enum class SpectrumKind { fft_amplitude, odmr_contrast };

struct Spectrum {
  std::vector<double> freqs_mhz;  // strictly increasing
  std::vector<double> values;
  SpectrumKind kind = SpectrumKind::fft_amplitude;
  std::string source;
  double resolution_mhz = 0.0;
};

enum class PeakShape { lorentzian, gaussian };
enum class FftWindow { none, hann };

struct PeakFit {
  double center_mhz = 0.0;
  double fwhm_mhz = 0.0;
  double amplitude = 0.0;
  PeakShape shape = PeakShape::lorentzian;
  double residual_norm = 0.0;
  // amplitude exceeds 3x the residual RMS; a flat input never yields a
  // confident peak
  bool significant = false;
};

// Best-so-far parameters ride along when the fit fails to converge.
class FitUnconverged : public std::runtime_error {
 public:
  FitUnconverged(std::string msg, std::vector<PeakFit> best)
      : std::runtime_error(std::move(msg)), best_fit(std::move(best)) {}
  std::vector<PeakFit> best_fit;
};

// One-sided amplitude spectrum of the mean-subtracted signal.  Windowing is
// applied before zero padding; resolution = 1/(t_max * zero_pad_factor).
Spectrum fft_spectrum(const lind::TrajectoryRecord& traj, FftWindow window,
                      int zero_pad_factor);

// Sum of n_peaks profiles plus a constant baseline, damped Gauss-Newton
// (Levenberg-Marquardt) with analytic Jacobians.  Auto-init picks the
// n_peaks largest local maxima separated by >= 2 bins, lower frequency first
// on ties.  Result sorted by center.
struct FitInit {
  bool automatic = true;
  std::vector<double> centers_mhz;  // explicit init, size n_peaks
};
std::vector<PeakFit> fit_peaks(const Spectrum& s, int n_peaks, PeakShape shape,
                               const FitInit& init = {});

// |center1 - center2| of exactly two fitted peaks.
double zeeman_splitting(const std::vector<PeakFit>& peaks);

// (pl_off - pl_on) / pl_off
double odmr_contrast(double pl_on, double pl_off);

// CSV ingestion, header `frequency_mhz,contrast` (or `frequency_mhz,value`).
Spectrum read_spectrum_csv(const std::string& path);

}  // namespace odmr::spec
