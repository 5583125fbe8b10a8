#include "odmr/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <optional>

#include <json.hpp>

#include "odmr/linefit.hpp"

namespace odmr::inv {

namespace {

Vector3d spherical_field(double b, double theta, double phi) {
  return {b * std::sin(theta) * std::cos(phi), b * std::sin(theta) * std::sin(phi),
          b * std::cos(theta)};
}

void check_axis(const std::vector<double>& axis, const char* name) {
  if (axis.empty()) throw std::invalid_argument(std::string("GridSpec: empty axis ") + name);
  for (std::size_t i = 1; i < axis.size(); ++i)
    if (!(axis[i] > axis[i - 1]))
      throw std::invalid_argument(std::string("GridSpec: axis not strictly increasing: ") + name);
}

// conservative bound on the largest frequency scale of the defect-frame
// Hamiltonian, used for the auto time step
double auto_dt(const spin::SpinParams& params, double b_mag_mt) {
  const double f_bound =
      params.d_mhz + params.e_mhz + 2.0 * params.gamma_mhz_per_mt() * b_mag_mt;
  return 1.0 / (22.0 * f_bound);
}

double auto_halfwidth(const spin::SpinParams& params, double b_mag_mt) {
  return std::hypot(params.e_mhz, params.gamma_mhz_per_mt() * std::max(b_mag_mt, 1.0)) + 20.0;
}

spec::Spectrum crop(const spec::Spectrum& s, double lo_mhz, double hi_mhz) {
  spec::Spectrum out;
  out.kind = s.kind;
  out.source = s.source;
  out.resolution_mhz = s.resolution_mhz;
  for (std::size_t i = 0; i < s.freqs_mhz.size(); ++i) {
    if (s.freqs_mhz[i] >= lo_mhz && s.freqs_mhz[i] <= hi_mhz) {
      out.freqs_mhz.push_back(s.freqs_mhz[i]);
      out.values.push_back(s.values[i]);
    }
  }
  return out;
}

// amplitude-weighted RMS spread about the local centroid of [lo, hi)
double branch_spread(const spec::Spectrum& s, double lo, double hi) {
  double tot = 0.0, cen = 0.0;
  for (std::size_t i = 0; i < s.freqs_mhz.size(); ++i) {
    if (s.freqs_mhz[i] < lo || s.freqs_mhz[i] >= hi) continue;
    const double q = std::abs(s.values[i]);
    tot += q;
    cen += q * s.freqs_mhz[i];
  }
  if (tot <= 0.0) throw std::runtime_error("forward_features: empty spectrum branch");
  cen /= tot;
  double var = 0.0;
  for (std::size_t i = 0; i < s.freqs_mhz.size(); ++i) {
    if (s.freqs_mhz[i] < lo || s.freqs_mhz[i] >= hi) continue;
    const double q = std::abs(s.values[i]);
    const double df = s.freqs_mhz[i] - cen;
    var += q * df * df;
  }
  return std::sqrt(var / tot);
}

// One resolved spectral line, possibly one of several rival assignments.
struct LineHypothesis {
  double center_mhz = 0.0;
  double amplitude = 0.0;
  bool consensus = false;  // seen at more than one sampling rate
};

struct ForwardResult {
  std::vector<LineHypothesis> hi, lo;  // ranked, best first, never empty
  double w_hi = 0.0, w_lo = 0.0;
};

// Pole of one undersampled record attributed to a target line.
struct Attribution {
  double freq_mhz;   // unfolded, absolute
  double amplitude;
  double decay_per_us;
  int stride;
};

// Merge per-rate attributions that agree in absolute frequency, rank by
// (cross-rate consensus, physically plausible decay, amplitude).  A genuine
// line of the relaxing ensemble decays at a few Gamma = 1/T1 at most; a much
// faster "decay" marks a background line distorted by its neighbours.
std::vector<LineHypothesis> cluster_attributions(std::vector<Attribution> cands,
                                                 double max_decay_per_us, int topn) {
  std::sort(cands.begin(), cands.end(),
            [](const Attribution& a, const Attribution& b) { return a.freq_mhz < b.freq_mhz; });
  struct Cluster {
    std::vector<Attribution> members;
  };
  std::vector<Cluster> clusters;
  for (const auto& c : cands) {
    if (!clusters.empty() && c.freq_mhz - clusters.back().members.back().freq_mhz < 0.06)
      clusters.back().members.push_back(c);
    else
      clusters.push_back({{c}});
  }
  struct Scored {
    std::size_t n_rates;
    bool plausible_decay;
    double mean_amp;
    double median_freq;
  };
  std::vector<Scored> scored;
  for (auto& cl : clusters) {
    std::vector<int> strides;
    double min_dec = std::numeric_limits<double>::infinity();
    double amp = 0.0;
    std::vector<double> freqs;
    for (const auto& m : cl.members) {
      strides.push_back(m.stride);
      min_dec = std::min(min_dec, m.decay_per_us);
      amp += m.amplitude;
      freqs.push_back(m.freq_mhz);
    }
    std::sort(strides.begin(), strides.end());
    strides.erase(std::unique(strides.begin(), strides.end()), strides.end());
    std::sort(freqs.begin(), freqs.end());
    const double med = freqs.size() % 2 ? freqs[freqs.size() / 2]
                                        : 0.5 * (freqs[freqs.size() / 2 - 1] +
                                                 freqs[freqs.size() / 2]);
    scored.push_back({strides.size(), min_dec < max_decay_per_us,
                      amp / static_cast<double>(cl.members.size()), med});
    if (std::getenv("ODMR_DEBUG_CLUSTERS")) {
      std::fprintf(stderr, "cluster ns=%zu mind=%.3f amp=%.3f med=%.4f |",
                   strides.size(), min_dec, amp / cl.members.size(), med);
      for (const auto& m : cl.members)
        std::fprintf(stderr, " (%.4f,%.3f,%.3f,%d)", m.freq_mhz, m.amplitude,
                     m.decay_per_us, m.stride);
      std::fprintf(stderr, "\n");
    }
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.n_rates != b.n_rates) return a.n_rates > b.n_rates;
    if (a.plausible_decay != b.plausible_decay) return a.plausible_decay;
    return a.mean_amp > b.mean_amp;
  });
  std::vector<LineHypothesis> out;
  for (const auto& s : scored) {
    if (static_cast<int>(out.size()) >= topn) break;
    out.push_back({s.median_freq, s.mean_amp, s.n_rates >= 2});
  }
  return out;
}

// Pick undersampling factors whose folded line positions stay clear of DC,
// Nyquist, each other, and the difference line nu_hi - nu_lo.
std::vector<int> choose_strides(double dt_us, double nu_hi, double nu_lo, int n_keep) {
  std::vector<std::pair<double, int>> scored;  // (margin, stride)
  const int k_min = std::max(1, static_cast<int>(1.0 / (900.0 * dt_us)));
  const int k_max = static_cast<int>(1.0 / (450.0 * dt_us));
  for (int k = k_min; k <= k_max; ++k) {
    const double fs = 1.0 / (k * dt_us);
    const double fh = linefit::folded_frequency_mhz(nu_hi, fs);
    const double fl = linefit::folded_frequency_mhz(nu_lo, fs);
    const double dd = nu_hi - nu_lo;
    const double m = std::min({fh, fl, std::abs(fh - fl), std::abs(fh - dd),
                               std::abs(fl - dd), fs / 2.0 - fh, fs / 2.0 - fl});
    scored.emplace_back(m, k);
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> out;
  for (const auto& [m, k] : scored) {
    if (static_cast<int>(out.size()) >= n_keep) break;
    out.push_back(k);
  }
  return out;
}

// Full forward pipeline.  supervised_ref carries the known line positions of
// a calibration field; probes pass nullopt and keep rival assignments.
ForwardResult run_forward(const std::vector<orient::DefectOrientation>& ensemble,
                          const spin::SpinParams& params, const Vector3d& b_lab_mt,
                          const ForwardSettings& fwd,
                          const std::optional<std::array<double, 2>>& supervised_ref) {
  spec::Spectrum spectrum;
  double dt = fwd.dt_us;
  if (fwd.mode == SimMode::fid) {
    if (dt <= 0.0) dt = auto_dt(params, b_lab_mt.norm());
    const auto traj = lind::fid_signal(ensemble, params, b_lab_mt, fwd.t_max_us, dt,
                                       fwd.drive_axis_lab);
    spectrum = spec::fft_spectrum(traj, fwd.window, fwd.zero_pad);
  } else {
    if (fwd.cw_omega_grid_mhz.empty())
      throw std::invalid_argument("forward_features: cw mode needs a frequency grid");
    if (dt <= 0.0)
      dt = 0.5 / (22.0 * (params.d_mhz + params.e_mhz +
                          2.0 * params.gamma_mhz_per_mt() * b_lab_mt.norm() +
                          fwd.cw_omega_grid_mhz.back()));
    const double settle = fwd.settle_time_us > 0.0 ? fwd.settle_time_us : 3.0 * params.t1_us;
    spectrum = lind::cw_sweep(ensemble, params, b_lab_mt, fwd.drive_amplitude_mt,
                              fwd.cw_omega_grid_mhz, settle, fwd.avg_window_us, dt, fwd.beta_pl,
                              fwd.drive_axis_lab);
  }

  // restrict to the ZFS manifold before fitting; the FID also carries
  // low-frequency difference coherences that are not resonance peaks
  const double hw = fwd.window_halfwidth_mhz > 0.0
                        ? fwd.window_halfwidth_mhz
                        : auto_halfwidth(params, b_lab_mt.norm());
  const auto windowed = crop(spectrum, params.d_mhz - hw, params.d_mhz + hw);
  if (windowed.freqs_mhz.empty())
    throw std::runtime_error("forward_features: empty spectrum window");

  // the doublet straddles D for any field, so seed one peak on each side;
  // automatic initialization can latch both peaks onto the taller line when
  // the powder background grows shoulders
  double best_lo = -1.0, best_hi = -1.0;
  double c_lo = params.d_mhz - params.e_mhz, c_hi = params.d_mhz + params.e_mhz;
  for (std::size_t i = 0; i < windowed.freqs_mhz.size(); ++i) {
    if (windowed.freqs_mhz[i] < params.d_mhz) {
      if (windowed.values[i] > best_lo) {
        best_lo = windowed.values[i];
        c_lo = windowed.freqs_mhz[i];
      }
    } else if (windowed.values[i] > best_hi) {
      best_hi = windowed.values[i];
      c_hi = windowed.freqs_mhz[i];
    }
  }
  spec::FitInit init;
  init.automatic = false;
  init.centers_mhz = {c_lo, c_hi};
  LineHypothesis coarse_hi{c_hi, std::max(best_hi, 0.0), false};
  LineHypothesis coarse_lo{c_lo, std::max(best_lo, 0.0), false};
  bool coarse_ok = false;
  try {
    std::vector<spec::PeakFit> fits;
    try {
      fits = spec::fit_peaks(windowed, 2, spec::PeakShape::lorentzian, init);
    } catch (const spec::FitUnconverged& e) {
      fits = e.best_fit;
    }
    if (fits.size() == 2 && fits[0].center_mhz < params.d_mhz &&
        fits[1].center_mhz > params.d_mhz) {
      coarse_lo = {fits[0].center_mhz, fits[0].amplitude, false};
      coarse_hi = {fits[1].center_mhz, fits[1].amplitude, false};
      coarse_ok = true;
    }
  } catch (const std::exception&) {
    // bin-peak fallback stays in place
  }

  const bool refine = fwd.mode == SimMode::fid && fwd.refine_t_max_us > 0.0;
  if (!refine && !coarse_ok)
    throw std::runtime_error("forward_features: fitted peaks do not straddle D");

  ForwardResult result;
  result.w_hi = branch_spread(windowed, params.d_mhz, params.d_mhz + hw);
  result.w_lo = branch_spread(windowed, params.d_mhz - hw, params.d_mhz);
  result.hi = {coarse_hi};
  result.lo = {coarse_lo};
  if (!refine) return result;

  // Parametric stage: long undersampled records, damped-exponential fits,
  // consensus over several sampling rates.  The windowed-FFT centers above
  // are biased by the persistent background of the random sub-ensemble; the
  // parametric fit resolves the aligned lines from that background.
  const double ref_hi = supervised_ref ? (*supervised_ref)[0] : coarse_hi.center_mhz;
  const double ref_lo = supervised_ref ? (*supervised_ref)[1] : coarse_lo.center_mhz;
  std::vector<Attribution> cands_hi, cands_lo;
  for (const int k : choose_strides(dt, ref_hi, ref_lo, fwd.refine_strides)) {
    const double dt_k = k * dt;
    const double fs = 1.0 / dt_k;
    const auto traj = lind::fid_signal_undersampled(ensemble, params, b_lab_mt,
                                                    fwd.refine_t_max_us, dt_k,
                                                    fwd.drive_axis_lab);
    const auto lines = linefit::fit_damped_lines(traj.signals, dt_k, fwd.refine_order);
    auto attribute = [&](double ref, std::vector<Attribution>& sink) {
      const double f_exp = linefit::folded_frequency_mhz(ref, fs);
      for (const auto& l : lines) {
        if (std::abs(l.freq_mhz - f_exp) >= 2.0 || l.amplitude <= 0.02) continue;
        sink.push_back({linefit::unfold_frequency_mhz(l.freq_mhz, fs, ref), l.amplitude,
                        l.decay_per_us, k});
      }
    };
    attribute(ref_hi, cands_hi);
    attribute(ref_lo, cands_lo);
  }

  const double max_decay = 5.0 / params.t1_us;
  auto resolve = [&](std::vector<Attribution>& cands, double ref,
                     const LineHypothesis& coarse) {
    std::vector<LineHypothesis> hyps;
    if (supervised_ref) {
      // the applied field is known: take the cluster nearest the known line
      auto all = cluster_attributions(std::move(cands), max_decay, 1000);
      const LineHypothesis* best = nullptr;
      for (const auto& h : all)
        if (!best || std::abs(h.center_mhz - ref) < std::abs(best->center_mhz - ref)) best = &h;
      if (best && std::abs(best->center_mhz - ref) < 0.5) hyps = {*best};
    } else {
      hyps = cluster_attributions(std::move(cands), max_decay, 2);
    }
    if (hyps.empty()) hyps = {coarse};
    return hyps;
  };
  result.hi = resolve(cands_hi, ref_hi, coarse_hi);
  result.lo = resolve(cands_lo, ref_lo, coarse_lo);
  if (supervised_ref && (!result.hi[0].consensus || !result.lo[0].consensus) &&
      fwd.refine_strides >= 2)
    throw std::runtime_error("forward_features: no cross-rate consensus for a known line");
  return result;
}

std::vector<double> assemble(const ForwardResult& r, const LineHypothesis& hi,
                             const LineHypothesis& lo, bool include_amplitudes) {
  std::vector<double> f{hi.center_mhz, lo.center_mhz};
  if (include_amplitudes) {
    f.push_back(hi.amplitude);
    f.push_back(lo.amplitude);
  }
  f.push_back(r.w_hi);
  f.push_back(r.w_lo);
  return f;
}

}  // namespace

void GridSpec::validate() const {
  check_axis(b_mt, "b_mt");
  check_axis(theta_rad, "theta_rad");
  check_axis(phi_rad, "phi_rad");
  if (b_mt.front() < 0.0) throw std::invalid_argument("GridSpec: negative |B|");
  if (theta_rad.front() < 0.0 || theta_rad.back() > M_PI + 1e-12)
    throw std::invalid_argument("GridSpec: theta outside [0, pi]");
  if (phi_rad.front() < 0.0 || phi_rad.back() >= units::two_pi)
    throw std::invalid_argument("GridSpec: phi outside [0, 2pi)");
}

GridSpec GridSpec::regular(double b_max_mt, double b_step_mt, double angle_step_rad) {
  GridSpec g;
  for (double b = 0.0; b <= b_max_mt + 1e-12; b += b_step_mt) g.b_mt.push_back(b);
  for (double t = 0.0; t <= M_PI + 1e-12; t += angle_step_rad) g.theta_rad.push_back(std::min(t, M_PI));
  for (double p = 0.0; p < units::two_pi - 1e-12; p += angle_step_rad) g.phi_rad.push_back(p);
  return g;
}

std::size_t CalibrationTable::cell_index(std::size_t ib, std::size_t it, std::size_t ip) const {
  return ((ib * theta_rad.size() + it) * phi_rad.size() + ip) *
         static_cast<std::size_t>(feature_dim);
}

const double* CalibrationTable::cell(std::size_t ib, std::size_t it, std::size_t ip) const {
  return features.data() + cell_index(ib, it, ip);
}

bool CalibrationTable::cell_valid(std::size_t ib, std::size_t it, std::size_t ip) const {
  const double* f = cell(ib, it, ip);
  for (int d = 0; d < feature_dim; ++d)
    if (!std::isfinite(f[d])) return false;
  return true;
}

std::uint64_t hash_params(const spin::SpinParams& params) {
  // FNV-1a over the raw parameter bytes
  const double vals[] = {params.d_mhz, params.e_mhz, params.g_factor, params.t1_us};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(vals);
  for (std::size_t i = 0; i < sizeof(vals); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> forward_features(const std::vector<orient::DefectOrientation>& ensemble,
                                     const spin::SpinParams& params, const Vector3d& b_lab_mt,
                                     const ForwardSettings& fwd, bool include_amplitudes) {
  const auto r = run_forward(ensemble, params, b_lab_mt, fwd, std::nullopt);
  return assemble(r, r.hi[0], r.lo[0], include_amplitudes);
}

std::vector<std::vector<double>> probe_feature_candidates(
    const std::vector<orient::DefectOrientation>& ensemble, const spin::SpinParams& params,
    const Vector3d& b_lab_mt, const ForwardSettings& fwd, bool include_amplitudes) {
  const auto r = run_forward(ensemble, params, b_lab_mt, fwd, std::nullopt);
  // cross product of rival line assignments, best-ranked combination first
  std::vector<std::vector<double>> out;
  for (std::size_t rank = 0; rank < r.hi.size() + r.lo.size(); ++rank)
    for (std::size_t i = 0; i < r.hi.size(); ++i)
      for (std::size_t j = 0; j < r.lo.size(); ++j)
        if (i + j == rank) out.push_back(assemble(r, r.hi[i], r.lo[j], include_amplitudes));
  return out;
}

CalibrationTable build_calibration(const std::vector<orient::DefectOrientation>& ensemble,
                                   const spin::SpinParams& params, const GridSpec& grid,
                                   const Fingerprint& fingerprint) {
  grid.validate();
  CalibrationTable table;
  table.b_mt = grid.b_mt;
  table.theta_rad = grid.theta_rad;
  table.phi_rad = grid.phi_rad;
  table.feature_dim = grid.include_amplitudes ? 6 : 4;
  table.fingerprint = fingerprint;

  // pin the settings that default from |B| to the table's field range, so
  // every cell (and any probe reusing these settings) shares one pipeline
  ForwardSettings fwd = grid.forward;
  if (fwd.mode == SimMode::fid && fwd.dt_us <= 0.0)
    fwd.dt_us = auto_dt(params, grid.b_mt.back());
  if (fwd.window_halfwidth_mhz <= 0.0)
    fwd.window_halfwidth_mhz = auto_halfwidth(params, grid.b_mt.back());

  const bool refine = fwd.mode == SimMode::fid && fwd.refine_t_max_us > 0.0;
  const double center_sigma = refine ? 0.05 : 1.0;
  table.feature_sigma = grid.include_amplitudes
                            ? std::vector<double>{center_sigma, center_sigma, 0.05, 0.05, 0.5, 0.5}
                            : std::vector<double>{center_sigma, center_sigma, 0.5, 0.5};

  const std::size_t n_cells = grid.b_mt.size() * grid.theta_rad.size() * grid.phi_rad.size();
  table.features.assign(n_cells * static_cast<std::size_t>(table.feature_dim),
                        std::numeric_limits<double>::quiet_NaN());

  std::size_t failed = 0;
  for (std::size_t ib = 0; ib < grid.b_mt.size(); ++ib) {
    for (std::size_t it = 0; it < grid.theta_rad.size(); ++it) {
      for (std::size_t ip = 0; ip < grid.phi_rad.size(); ++ip) {
        const Vector3d b = spherical_field(grid.b_mt[ib], grid.theta_rad[it], grid.phi_rad[ip]);
        try {
          std::optional<std::array<double, 2>> ref;
          if (refine) {
            // the calibration knows its applied field: the aligned-grain
            // lines sit exactly at the eigenvalue differences of the
            // reference-orientation Hamiltonian
            const auto e = spin::eigenfrequencies(spin::build_hamiltonian(params, b));
            ref = std::array<double, 2>{e[0] - e[2], e[1] - e[2]};
          }
          const auto r = run_forward(ensemble, params, b, fwd, ref);
          const auto f = assemble(r, r.hi[0], r.lo[0], grid.include_amplitudes);
          std::copy(f.begin(), f.end(),
                    table.features.begin() + static_cast<long>(table.cell_index(ib, it, ip)));
        } catch (const std::exception&) {
          ++failed;  // cell stays NaN
        }
      }
    }
  }
  if (failed > n_cells / 10)
    throw std::runtime_error("build_calibration: more than 10% of grid cells failed");
  return table;
}

std::string CalibrationTable::to_json() const {
  nlohmann::json j;
  j["b_mt"] = b_mt;
  j["theta_rad"] = theta_rad;
  j["phi_rad"] = phi_rad;
  j["feature_dim"] = feature_dim;
  nlohmann::json feats = nlohmann::json::array();
  for (double f : features) {
    if (std::isfinite(f))
      feats.push_back(f);
    else
      feats.push_back(nullptr);
  }
  j["features"] = feats;
  if (!feature_sigma.empty()) j["feature_sigma"] = feature_sigma;
  j["fingerprint"] = {{"seed", fingerprint.seed},
                      {"n_random", fingerprint.n_random},
                      {"n_aligned", fingerprint.n_aligned},
                      {"params_hash", fingerprint.params_hash}};
  return j.dump(2);
}

CalibrationTable CalibrationTable::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  CalibrationTable t;
  t.b_mt = j.at("b_mt").get<std::vector<double>>();
  t.theta_rad = j.at("theta_rad").get<std::vector<double>>();
  t.phi_rad = j.at("phi_rad").get<std::vector<double>>();
  t.feature_dim = j.at("feature_dim").get<int>();
  for (const auto& v : j.at("features"))
    t.features.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                     : v.get<double>());
  if (j.contains("feature_sigma"))
    t.feature_sigma = j.at("feature_sigma").get<std::vector<double>>();
  if (!t.feature_sigma.empty() &&
      t.feature_sigma.size() != static_cast<std::size_t>(t.feature_dim))
    throw std::invalid_argument("CalibrationTable: feature_sigma size mismatch");
  const auto& fp = j.at("fingerprint");
  t.fingerprint.seed = fp.at("seed").get<std::uint64_t>();
  t.fingerprint.n_random = fp.at("n_random").get<int>();
  t.fingerprint.n_aligned = fp.at("n_aligned").get<int>();
  t.fingerprint.params_hash = fp.at("params_hash").get<std::uint64_t>();
  const std::size_t expect = t.b_mt.size() * t.theta_rad.size() * t.phi_rad.size() *
                             static_cast<std::size_t>(t.feature_dim);
  if (t.features.size() != expect)
    throw std::invalid_argument("CalibrationTable: feature array size mismatch");
  return t;
}

namespace {

struct Surrogate {
  const CalibrationTable& table;
  std::vector<double> weights;  // per feature dim

  explicit Surrogate(const CalibrationTable& t) : table(t) {
    const int dim = t.feature_dim;
    weights.assign(static_cast<std::size_t>(dim), 0.0);
    if (!t.feature_sigma.empty()) {
      for (int d = 0; d < dim; ++d)
        weights[static_cast<std::size_t>(d)] =
            t.feature_sigma[static_cast<std::size_t>(d)] > 0.0
                ? 1.0 / t.feature_sigma[static_cast<std::size_t>(d)]
                : 0.0;
      return;
    }
    // legacy tables: weight by the table-wide spread of each feature
    for (int d = 0; d < dim; ++d) {
      double sum = 0.0, sum2 = 0.0;
      std::size_t n = 0;
      for (std::size_t i = static_cast<std::size_t>(d); i < t.features.size();
           i += static_cast<std::size_t>(dim)) {
        if (!std::isfinite(t.features[i])) continue;
        sum += t.features[i];
        sum2 += t.features[i] * t.features[i];
        ++n;
      }
      if (n < 2) continue;
      const double mean = sum / static_cast<double>(n);
      const double var = std::max(sum2 / static_cast<double>(n) - mean * mean, 0.0);
      const double sd = std::sqrt(var);
      weights[static_cast<std::size_t>(d)] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
  }

  // bracketing index + fraction on a monotone axis, clamped
  static void locate(const std::vector<double>& axis, double x, std::size_t& lo, double& frac) {
    if (axis.size() == 1 || x <= axis.front()) {
      lo = 0;
      frac = 0.0;
      return;
    }
    if (x >= axis.back()) {
      lo = axis.size() - 2;
      frac = 1.0;
      return;
    }
    const auto it = std::upper_bound(axis.begin(), axis.end(), x);
    lo = static_cast<std::size_t>(it - axis.begin()) - 1;
    frac = (x - axis[lo]) / (axis[lo + 1] - axis[lo]);
  }

  // per-axis interpolation stencil: up to 4 nodes with Lagrange weights
  struct AxisStencil {
    int count = 0;
    std::size_t idx[4] = {0, 0, 0, 0};
    double w[4] = {0, 0, 0, 0};
  };

  static AxisStencil cubic_stencil(const std::vector<double>& axis, double x, bool periodic) {
    AxisStencil st;
    const std::size_t n = axis.size();
    if (n == 1) {
      st.count = 1;
      st.idx[0] = 0;
      st.w[0] = 1.0;
      return st;
    }
    double nodes[4];
    if (n < 4) {  // linear on sparse axes
      std::size_t lo;
      double frac;
      if (periodic && x >= axis.back()) {  // wrap segment [last, first + 2pi]
        st.count = 2;
        st.idx[0] = n - 1;
        st.idx[1] = 0;
        const double span = units::two_pi + axis.front() - axis.back();
        const double f = (x - axis.back()) / span;
        st.w[0] = 1.0 - f;
        st.w[1] = f;
        return st;
      }
      locate(axis, x, lo, frac);
      st.count = 2;
      st.idx[0] = lo;
      st.idx[1] = lo + 1;
      st.w[0] = 1.0 - frac;
      st.w[1] = frac;
      return st;
    }
    st.count = 4;
    if (periodic) {
      // segment index treating [last, first + 2pi) as segment n-1
      std::size_t i0;
      double frac;
      if (x >= axis.back())
        i0 = n - 1;
      else
        locate(axis, x, i0, frac);
      for (int a = 0; a < 4; ++a) {
        const long j = static_cast<long>(i0) - 1 + a;
        const long wrap = j < 0 ? -1 : (j >= static_cast<long>(n) ? 1 : 0);
        const std::size_t jj = static_cast<std::size_t>(j - wrap * static_cast<long>(n));
        st.idx[a] = jj;
        nodes[a] = axis[jj] + wrap * units::two_pi;
      }
    } else {
      std::size_t i0;
      double frac;
      locate(axis, x, i0, frac);
      const std::size_t lo = std::min(i0 > 0 ? i0 - 1 : 0, n - 4);
      for (int a = 0; a < 4; ++a) {
        st.idx[a] = lo + static_cast<std::size_t>(a);
        nodes[a] = axis[st.idx[a]];
      }
    }
    for (int a = 0; a < 4; ++a) {
      double w = 1.0;
      for (int b = 0; b < 4; ++b)
        if (b != a) w *= (x - nodes[b]) / (nodes[a] - nodes[b]);
      st.w[a] = w;
    }
    return st;
  }

  double wrap_phi(double phi) const {
    phi = std::fmod(phi, units::two_pi);
    if (phi < 0.0) phi += units::two_pi;
    // map into [first, first + 2pi)
    if (phi < table.phi_rad.front()) phi += units::two_pi;
    return phi;
  }

  // local tricubic (Lagrange) interpolation, phi periodic, stencils shifted
  // inside at the b/theta edges; falls back to trilinear when a stencil cell
  // is missing, empty when even the bracketing corners are missing
  std::optional<std::vector<double>> interpolate(double b, double theta, double phi) const {
    phi = wrap_phi(phi);
    const auto sb = cubic_stencil(table.b_mt, b, false);
    const auto st = cubic_stencil(table.theta_rad, theta, false);
    const auto sp = cubic_stencil(table.phi_rad, phi, true);
    std::vector<double> out(static_cast<std::size_t>(table.feature_dim), 0.0);
    bool ok = true;
    for (int a = 0; a < sb.count && ok; ++a)
      for (int c = 0; c < st.count && ok; ++c)
        for (int e = 0; e < sp.count && ok; ++e) {
          if (!table.cell_valid(sb.idx[a], st.idx[c], sp.idx[e])) {
            ok = false;
            break;
          }
          const double wgt = sb.w[a] * st.w[c] * sp.w[e];
          const double* cell = table.cell(sb.idx[a], st.idx[c], sp.idx[e]);
          for (int d = 0; d < table.feature_dim; ++d)
            out[static_cast<std::size_t>(d)] += wgt * cell[d];
        }
    if (ok) return out;
    return interpolate_linear(b, theta, phi);
  }

  std::optional<std::vector<double>> interpolate_linear(double b, double theta,
                                                        double phi) const {
    std::size_t ib, it;
    double fb, ft;
    locate(table.b_mt, b, ib, fb);
    locate(table.theta_rad, theta, it, ft);

    phi = wrap_phi(phi);
    std::size_t ip0, ip1;
    double fp;
    const auto& pax = table.phi_rad;
    if (pax.size() == 1) {
      ip0 = ip1 = 0;
      fp = 0.0;
    } else if (phi >= pax.back()) {  // wrap segment [last, first + 2pi]
      ip0 = pax.size() - 1;
      ip1 = 0;
      fp = (phi - pax.back()) / (units::two_pi + pax.front() - pax.back());
    } else {
      locate(pax, phi, ip0, fp);
      ip1 = ip0 + 1;
    }

    const std::size_t ib1 = std::min(ib + 1, table.b_mt.size() - 1);
    const std::size_t it1 = std::min(it + 1, table.theta_rad.size() - 1);
    std::vector<double> out(static_cast<std::size_t>(table.feature_dim), 0.0);
    for (int db = 0; db < 2; ++db) {
      for (int dt = 0; dt < 2; ++dt) {
        for (int dp = 0; dp < 2; ++dp) {
          const std::size_t jb = db ? ib1 : ib;
          const std::size_t jt = dt ? it1 : it;
          const std::size_t jp = dp ? ip1 : ip0;
          if (!table.cell_valid(jb, jt, jp)) return std::nullopt;
          const double wgt = (db ? fb : 1.0 - fb) * (dt ? ft : 1.0 - ft) * (dp ? fp : 1.0 - fp);
          const double* c = table.cell(jb, jt, jp);
          for (int d = 0; d < table.feature_dim; ++d)
            out[static_cast<std::size_t>(d)] += wgt * c[d];
        }
      }
    }
    return out;
  }

  double misfit(const std::vector<double>& f, const std::vector<double>& obs) const {
    double s = 0.0;
    for (std::size_t d = 0; d < f.size(); ++d) {
      const double e = weights[d] * (f[d] - obs[d]);
      s += e * e;
    }
    return std::sqrt(s);
  }
};

}  // namespace

FieldEstimate invert_field(const std::vector<double>& observed_features,
                           const CalibrationTable& table, const InvertOptions& opt) {
  if (static_cast<int>(observed_features.size()) != table.feature_dim)
    throw std::invalid_argument("invert_field: feature dimensionality mismatch");
  if (table.b_mt.empty() || table.theta_rad.empty() || table.phi_rad.empty())
    throw std::invalid_argument("invert_field: empty calibration table");

  const Surrogate sur(table);

  // coarse stage: rank all valid grid cells, keep the best few as starting
  // points so a locally wrong basin cannot trap the refinement
  struct Start {
    double misfit;
    std::size_t ib, it, ip;
  };
  std::vector<Start> starts;
  for (std::size_t ib = 0; ib < table.b_mt.size(); ++ib)
    for (std::size_t it = 0; it < table.theta_rad.size(); ++it)
      for (std::size_t ip = 0; ip < table.phi_rad.size(); ++ip) {
        if (!table.cell_valid(ib, it, ip)) continue;
        const double* c = table.cell(ib, it, ip);
        const std::vector<double> f(c, c + table.feature_dim);
        starts.push_back({sur.misfit(f, observed_features), ib, it, ip});
      }
  if (starts.empty()) throw std::runtime_error("invert_field: no valid cells in table");
  const std::size_t n_starts = std::min<std::size_t>(8, starts.size());
  std::partial_sort(starts.begin(), starts.begin() + static_cast<long>(n_starts), starts.end(),
                    [](const Start& a, const Start& b) { return a.misfit < b.misfit; });

  const double steps[3] = {
      table.b_mt.size() > 1 ? 0.2 * (table.b_mt[1] - table.b_mt[0]) : 1e-3,
      table.theta_rad.size() > 1 ? 0.2 * (table.theta_rad[1] - table.theta_rad[0]) : 1e-3,
      table.phi_rad.size() > 1 ? 0.2 * (table.phi_rad[1] - table.phi_rad[0]) : 1e-3};
  auto clamp_point = [&](double* q) {
    q[0] = std::clamp(q[0], table.b_mt.front(), table.b_mt.back());
    q[1] = std::clamp(q[1], table.theta_rad.front(), table.theta_rad.back());
    q[2] = std::fmod(q[2], units::two_pi);
    if (q[2] < 0.0) q[2] += units::two_pi;
  };

  const int dim = table.feature_dim;
  // damped Gauss-Newton on the interpolated surrogate
  auto refine = [&](double* x, double& current) {
  double lambda = 1e-2;
  for (int iter = 0; iter < 60; ++iter) {
    const auto f0 = sur.interpolate(x[0], x[1], x[2]);
    if (!f0) break;
    Eigen::MatrixXd jac(dim, 3);
    for (int a = 0; a < 3; ++a) {
      double xp[3] = {x[0], x[1], x[2]};
      double xm[3] = {x[0], x[1], x[2]};
      xp[a] += steps[a];
      xm[a] -= steps[a];
      clamp_point(xp);
      clamp_point(xm);
      const auto fp_ = sur.interpolate(xp[0], xp[1], xp[2]);
      const auto fm_ = sur.interpolate(xm[0], xm[1], xm[2]);
      if (!fp_ || !fm_) {
        jac.col(a).setZero();
        continue;
      }
      const double denom = (a == 2) ? 2.0 * steps[a] : (xp[a] - xm[a]);
      for (int d = 0; d < dim; ++d)
        jac(d, a) = denom != 0.0
                        ? sur.weights[static_cast<std::size_t>(d)] *
                              ((*fp_)[static_cast<std::size_t>(d)] -
                               (*fm_)[static_cast<std::size_t>(d)]) / denom
                        : 0.0;
    }
    Eigen::VectorXd r(dim);
    for (int d = 0; d < dim; ++d)
      r(d) = sur.weights[static_cast<std::size_t>(d)] *
             (observed_features[static_cast<std::size_t>(d)] - (*f0)[static_cast<std::size_t>(d)]);

    Eigen::Matrix3d a = jac.transpose() * jac;
    a.diagonal() += lambda * (a.diagonal().array() + 1e-12).matrix();
    const Eigen::Vector3d delta = a.ldlt().solve(jac.transpose() * r);
    if (!delta.allFinite() || delta.cwiseAbs().maxCoeff() < 1e-12) break;

    double trial[3] = {x[0] + delta(0), x[1] + delta(1), x[2] + delta(2)};
    clamp_point(trial);
    const auto ftrial = sur.interpolate(trial[0], trial[1], trial[2]);
    if (ftrial) {
      const double m = sur.misfit(*ftrial, observed_features);
      if (m < current) {
        x[0] = trial[0];
        x[1] = trial[1];
        x[2] = trial[2];
        current = m;
        lambda = std::max(lambda / 3.0, 1e-10);
        continue;
      }
    }
    lambda *= 4.0;
    if (lambda > 1e8) break;
  }
  };

  double x[3] = {0.0, 0.0, 0.0};
  double current = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < n_starts; ++s) {
    double xs[3] = {table.b_mt[starts[s].ib], table.theta_rad[starts[s].it],
                    table.phi_rad[starts[s].ip]};
    double ms = starts[s].misfit;
    refine(xs, ms);
    if (ms < current) {
      current = ms;
      x[0] = xs[0];
      x[1] = xs[1];
      x[2] = xs[2];
    }
  }

  FieldEstimate est;
  est.b_mag_mt = x[0];
  est.theta_rad = x[1];
  est.phi_rad = x[2];
  est.b_lab_mt = spherical_field(x[0], x[1], x[2]);
  est.residual = current;
  est.sign_degenerate = true;
  // every sign reflection of the components leaves the alignment-frame
  // spectrum invariant; enumerate the distinct ones
  for (const double sx : {1.0, -1.0})
    for (const double sy : {1.0, -1.0})
      for (const double sz : {1.0, -1.0}) {
        const Vector3d v(sx * est.b_lab_mt.x(), sy * est.b_lab_mt.y(), sz * est.b_lab_mt.z());
        bool dup = false;
        for (const auto& u : est.equivalent_fields_mt)
          if ((u - v).norm() < 1e-12) dup = true;
        if (!dup) est.equivalent_fields_mt.push_back(v);
      }

  // azimuth sensitivity at the solution: feature variation along the phi row
  // vs along the theta column of the nearest grid node
  {
    std::size_t ib, it;
    double fb, ft;
    Surrogate::locate(table.b_mt, x[0], ib, fb);
    Surrogate::locate(table.theta_rad, x[1], it, ft);
    if (fb > 0.5 && ib + 1 < table.b_mt.size()) ++ib;
    if (ft > 0.5 && it + 1 < table.theta_rad.size()) ++it;
    auto row_range = [&](bool along_phi) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      const std::size_t count = along_phi ? table.phi_rad.size() : table.theta_rad.size();
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t jt = along_phi ? it : k;
        const std::size_t jp = along_phi ? k : 0;
        if (!table.cell_valid(ib, jt, jp)) continue;
        const double* c = table.cell(ib, jt, jp);
        double norm = 0.0;
        for (int d = 0; d < dim; ++d) {
          const double v = sur.weights[static_cast<std::size_t>(d)] * c[d];
          norm += v * v;
        }
        norm = std::sqrt(norm);
        lo = std::min(lo, norm);
        hi = std::max(hi, norm);
      }
      return std::isfinite(lo) ? hi - lo : 0.0;
    };
    const double phi_var = row_range(true);
    const double theta_var = row_range(false);
    est.azimuth_indeterminate = phi_var < std::max(0.1 * theta_var, 1e-6);
  }

  const double b_res = table.b_mt.size() > 1 ? table.b_mt[1] - table.b_mt[0]
                                             : table.b_mt.front();
  est.direction_indeterminate = est.b_mag_mt < b_res;

  if (est.residual > opt.residual_threshold)
    throw NoConfidentEstimate("invert_field: residual above confidence threshold", est);
  return est;
}

FieldEstimate invert_field(const std::vector<std::vector<double>>& feature_candidates,
                           const CalibrationTable& table, const InvertOptions& opt) {
  if (feature_candidates.empty())
    throw std::invalid_argument("invert_field: no feature candidates");
  // Rank-preferred selection: the first hypothesis with an acceptable
  // residual wins.  Pure minimum-residual selection is unsafe here: a rival
  // line assignment can reach a smaller residual through a compensating
  // (|B|, theta) shift, whereas the hypothesis ranking already encodes the
  // physical plausibility of each assignment.  The table match only
  // overrides an implausible leader.
  InvertOptions unconf = opt;
  unconf.residual_threshold = std::numeric_limits<double>::infinity();
  std::vector<std::optional<FieldEstimate>> ests;
  for (const auto& f : feature_candidates) {
    try {
      ests.push_back(invert_field(f, table, unconf));
    } catch (const std::runtime_error&) {
      ests.push_back(std::nullopt);
    }
  }
  const FieldEstimate* selected = nullptr;
  const FieldEstimate* global_min = nullptr;
  for (const auto& e : ests) {
    if (!e) continue;
    if (!selected && e->residual <= opt.hypothesis_accept) selected = &*e;
    if (!global_min || e->residual < global_min->residual) global_min = &*e;
  }
  if (!global_min) throw std::runtime_error("invert_field: all hypotheses failed");
  if (!selected) selected = global_min;
  if (selected->residual > opt.residual_threshold)
    throw NoConfidentEstimate("invert_field: residual above confidence threshold", *selected);
  return *selected;
}

}  // namespace odmr::inv
