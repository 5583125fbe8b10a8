#include "odmr/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <fftw3.h>

#include "odmr/units.hpp"

namespace odmr::spec {

namespace {

void check_uniform_grid(const std::vector<double>& t) {
  if (t.size() < 16)
    throw std::invalid_argument("fft_spectrum: need at least 16 samples");
  const double dt = t[1] - t[0];
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-9 * std::max(dt, 1e-300))
      throw std::invalid_argument("fft_spectrum: non-uniform time grid");
  }
}

double lorentz_profile(double f, double c, double w) {
  const double u = 2.0 * (f - c) / w;
  return 1.0 / (1.0 + u * u);
}

double gauss_profile(double f, double c, double w) {
  const double k = 4.0 * std::log(2.0);
  const double v = (f - c) / w;
  return std::exp(-k * v * v);
}

// params layout: [baseline, (A, c, w) x n_peaks]
Eigen::VectorXd model_values(const Spectrum& s, const Eigen::VectorXd& p, int n_peaks,
                             PeakShape shape) {
  Eigen::VectorXd y = Eigen::VectorXd::Constant(static_cast<long>(s.freqs_mhz.size()), p(0));
  for (int k = 0; k < n_peaks; ++k) {
    const double a = p(1 + 3 * k), c = p(2 + 3 * k), w = p(3 + 3 * k);
    for (long i = 0; i < y.size(); ++i) {
      const double f = s.freqs_mhz[static_cast<std::size_t>(i)];
      y(i) += a * (shape == PeakShape::lorentzian ? lorentz_profile(f, c, w)
                                                  : gauss_profile(f, c, w));
    }
  }
  return y;
}

Eigen::MatrixXd model_jacobian(const Spectrum& s, const Eigen::VectorXd& p, int n_peaks,
                               PeakShape shape) {
  const long n = static_cast<long>(s.freqs_mhz.size());
  Eigen::MatrixXd j(n, p.size());
  j.col(0).setOnes();
  const double klog = 4.0 * std::log(2.0);
  for (int k = 0; k < n_peaks; ++k) {
    const double a = p(1 + 3 * k), c = p(2 + 3 * k), w = p(3 + 3 * k);
    for (long i = 0; i < n; ++i) {
      const double f = s.freqs_mhz[static_cast<std::size_t>(i)];
      if (shape == PeakShape::lorentzian) {
        const double u = 2.0 * (f - c) / w;
        const double den = 1.0 + u * u;
        const double phi = 1.0 / den;
        j(i, 1 + 3 * k) = phi;
        j(i, 2 + 3 * k) = 4.0 * a * u / (w * den * den);
        j(i, 3 + 3 * k) = 2.0 * a * u * u / (w * den * den);
      } else {
        const double v = f - c;
        const double phi = std::exp(-klog * v * v / (w * w));
        j(i, 1 + 3 * k) = phi;
        j(i, 2 + 3 * k) = a * phi * 2.0 * klog * v / (w * w);
        j(i, 3 + 3 * k) = a * phi * 2.0 * klog * v * v / (w * w * w);
      }
    }
  }
  return j;
}

struct InitGuess {
  std::vector<double> centers, heights;
};

InitGuess auto_initialize(const Spectrum& s, int n_peaks, double bin) {
  const auto& y = s.values;
  const auto& f = s.freqs_mhz;
  struct Max {
    double freq, height;
  };
  std::vector<Max> maxima;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (y[i] > y[i - 1] && y[i] > y[i + 1]) maxima.push_back({f[i], y[i]});
  }
  // highest first; equal heights resolved by lower frequency
  std::sort(maxima.begin(), maxima.end(), [](const Max& a, const Max& b) {
    if (a.height != b.height) return a.height > b.height;
    return a.freq < b.freq;
  });
  InitGuess g;
  for (const auto& m : maxima) {
    bool separated = true;
    for (double c : g.centers)
      if (std::abs(c - m.freq) < 2.0 * bin) separated = false;
    if (!separated) continue;
    g.centers.push_back(m.freq);
    g.heights.push_back(m.height);
    if (static_cast<int>(g.centers.size()) == n_peaks) break;
  }
  // degenerate spectra may lack enough maxima; spread leftovers over the span
  while (static_cast<int>(g.centers.size()) < n_peaks) {
    const double frac = (g.centers.size() + 1.0) / (n_peaks + 1.0);
    g.centers.push_back(f.front() + frac * (f.back() - f.front()));
    g.heights.push_back(0.0);
  }
  return g;
}

}  // namespace

Spectrum fft_spectrum(const lind::TrajectoryRecord& traj, FftWindow window,
                      int zero_pad_factor) {
  check_uniform_grid(traj.times_us);
  if (zero_pad_factor < 1)
    throw std::invalid_argument("fft_spectrum: zero_pad_factor must be >= 1");
  for (double v : traj.signals)
    if (!std::isfinite(v)) throw std::invalid_argument("fft_spectrum: non-finite signal");

  const std::size_t n = traj.signals.size();
  const double dt = traj.times_us[1] - traj.times_us[0];
  const double mean =
      std::accumulate(traj.signals.begin(), traj.signals.end(), 0.0) / static_cast<double>(n);

  const std::size_t n_pad = n * static_cast<std::size_t>(zero_pad_factor);
  double* in = fftw_alloc_real(n_pad);
  std::fill(in, in + n_pad, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0;
    if (window == FftWindow::hann)
      w = 0.5 * (1.0 - std::cos(units::two_pi * static_cast<double>(i) /
                                static_cast<double>(n - 1)));
    in[i] = w * (traj.signals[i] - mean);
  }

  const std::size_t n_out = n_pad / 2 + 1;
  fftw_complex* out = fftw_alloc_complex(n_out);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_pad), in, out, FFTW_ESTIMATE);
  fftw_execute(plan);

  Spectrum s;
  s.kind = SpectrumKind::fft_amplitude;
  s.source = "fft";
  s.resolution_mhz = 1.0 / (static_cast<double>(n_pad) * dt);
  s.freqs_mhz.resize(n_out);
  s.values.resize(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    s.freqs_mhz[k] = static_cast<double>(k) * s.resolution_mhz;
    const double mag = std::hypot(out[k][0], out[k][1]);
    const bool edge = (k == 0) || (n_pad % 2 == 0 && k == n_out - 1);
    s.values[k] = (edge ? 1.0 : 2.0) * mag / static_cast<double>(n);
  }
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(out);
  return s;
}

std::vector<PeakFit> fit_peaks(const Spectrum& s, int n_peaks, PeakShape shape,
                               const FitInit& init) {
  if (n_peaks < 1 || n_peaks > 4)
    throw std::invalid_argument("fit_peaks: n_peaks must be in 1..4");
  if (s.freqs_mhz.size() != s.values.size() ||
      s.freqs_mhz.size() < static_cast<std::size_t>(10 * n_peaks))
    throw std::invalid_argument("fit_peaks: need at least 10*n_peaks points");

  const long n = static_cast<long>(s.freqs_mhz.size());
  const double bin = (s.freqs_mhz.back() - s.freqs_mhz.front()) / static_cast<double>(n - 1);
  const double span = s.freqs_mhz.back() - s.freqs_mhz.front();
  const double w_min = 2.0 * bin, w_max = span;

  Eigen::VectorXd p(1 + 3 * n_peaks);
  const double baseline0 = *std::min_element(s.values.begin(), s.values.end());
  p(0) = baseline0;
  if (init.automatic) {
    const auto g = auto_initialize(s, n_peaks, bin);
    for (int k = 0; k < n_peaks; ++k) {
      p(1 + 3 * k) = g.heights[static_cast<std::size_t>(k)] - baseline0;
      p(2 + 3 * k) = g.centers[static_cast<std::size_t>(k)];
      p(3 + 3 * k) = std::max(w_min, 5.0 * bin);
    }
  } else {
    if (static_cast<int>(init.centers_mhz.size()) != n_peaks)
      throw std::invalid_argument("fit_peaks: explicit init needs n_peaks centers");
    const double y_max = *std::max_element(s.values.begin(), s.values.end());
    for (int k = 0; k < n_peaks; ++k) {
      p(1 + 3 * k) = y_max - baseline0;
      p(2 + 3 * k) = init.centers_mhz[static_cast<std::size_t>(k)];
      p(3 + 3 * k) = std::max(w_min, 5.0 * bin);
    }
  }

  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(s.values.data(), n);
  auto clamp_params = [&](Eigen::VectorXd& q) {
    for (int k = 0; k < n_peaks; ++k) {
      q(2 + 3 * k) = std::clamp(q(2 + 3 * k), s.freqs_mhz.front(), s.freqs_mhz.back());
      q(3 + 3 * k) = std::clamp(q(3 + 3 * k), w_min, w_max);
    }
  };
  clamp_params(p);

  double lambda = 1e-3;
  double sse = (y - model_values(s, p, n_peaks, shape)).squaredNorm();
  bool converged = false;
  for (int iter = 0; iter < 200 && !converged; ++iter) {
    const Eigen::VectorXd r = y - model_values(s, p, n_peaks, shape);
    const Eigen::MatrixXd j = model_jacobian(s, p, n_peaks, shape);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd jtr = j.transpose() * r;

    bool accepted = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      Eigen::VectorXd delta = a.ldlt().solve(jtr);
      if (!delta.allFinite()) {
        lambda *= 4.0;
        continue;
      }
      Eigen::VectorXd trial = p + delta;
      clamp_params(trial);
      const double trial_sse = (y - model_values(s, trial, n_peaks, shape)).squaredNorm();
      if (trial_sse <= sse) {
        const double rel_change =
            (trial - p).cwiseAbs().maxCoeff() / std::max(1.0, p.cwiseAbs().maxCoeff());
        p = trial;
        sse = trial_sse;
        lambda = std::max(lambda / 3.0, 1e-14);
        accepted = true;
        if (rel_change < 1e-10) converged = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) converged = true;  // stuck in a flat basin; treat as stationary
  }

  const double residual_norm = std::sqrt(sse);
  const double residual_rms = residual_norm / std::sqrt(static_cast<double>(n));
  std::vector<PeakFit> fits;
  for (int k = 0; k < n_peaks; ++k) {
    PeakFit f;
    f.amplitude = p(1 + 3 * k);
    f.center_mhz = p(2 + 3 * k);
    f.fwhm_mhz = p(3 + 3 * k);
    f.shape = shape;
    f.residual_norm = residual_norm;
    f.significant = std::abs(f.amplitude) >= 3.0 * residual_rms;
    fits.push_back(f);
  }
  std::sort(fits.begin(), fits.end(),
            [](const PeakFit& a, const PeakFit& b) { return a.center_mhz < b.center_mhz; });
  if (!converged)
    throw FitUnconverged("fit_peaks: no convergence after bounded iterations", fits);
  return fits;
}

double zeeman_splitting(const std::vector<PeakFit>& peaks) {
  if (peaks.size() != 2)
    throw std::invalid_argument("zeeman_splitting: exactly two peaks required");
  return std::abs(peaks[0].center_mhz - peaks[1].center_mhz);
}

double odmr_contrast(double pl_on, double pl_off) {
  if (!(pl_off > 0.0)) throw std::invalid_argument("odmr_contrast: pl_off must be > 0");
  return (pl_off - pl_on) / pl_off;
}

Spectrum read_spectrum_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("read_spectrum_csv: cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  Spectrum s;
  if (header == "frequency_mhz,contrast") {
    s.kind = SpectrumKind::odmr_contrast;
  } else if (header == "frequency_mhz,value") {
    s.kind = SpectrumKind::fft_amplitude;
  } else {
    throw std::invalid_argument("read_spectrum_csv: bad header '" + header + "'");
  }
  s.source = path;
  std::string line;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double f, v;
    char comma;
    if (!(ls >> f >> comma >> v) || comma != ',')
      throw std::invalid_argument("read_spectrum_csv: bad row " + std::to_string(row));
    if (!s.freqs_mhz.empty() && f <= s.freqs_mhz.back())
      throw std::invalid_argument("read_spectrum_csv: frequencies not increasing at row " +
                                  std::to_string(row));
    s.freqs_mhz.push_back(f);
    s.values.push_back(v);
  }
  if (s.freqs_mhz.size() >= 2)
    s.resolution_mhz = s.freqs_mhz[1] - s.freqs_mhz[0];
  return s;
}

}  // namespace odmr::spec
