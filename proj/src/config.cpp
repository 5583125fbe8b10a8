#include "odmr/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "odmr/sensing.hpp"

namespace odmr::io {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void expect_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + path + key + "'");
  }
}

template <typename T>
void load(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return buf;
}

spec::Spectrum zfs_window(const spec::Spectrum& s, const spin::SpinParams& p, double b_mag) {
  const double reach = 3.0 * p.gamma_mhz_per_mt() * b_mag + p.e_mhz + 100.0;
  spec::Spectrum out = s;
  out.freqs_mhz.clear();
  out.values.clear();
  for (std::size_t i = 0; i < s.freqs_mhz.size(); ++i) {
    if (s.freqs_mhz[i] >= p.d_mhz - reach && s.freqs_mhz[i] <= p.d_mhz + reach) {
      out.freqs_mhz.push_back(s.freqs_mhz[i]);
      out.values.push_back(s.values[i]);
    }
  }
  return out;
}

double auto_fid_dt(const spin::SpinParams& p, double b_mag) {
  return 1.0 / (22.0 * (p.d_mhz + p.e_mhz + 2.0 * p.gamma_mhz_per_mt() * b_mag));
}

json peaks_to_json(const std::vector<spec::PeakFit>& fits, bool converged) {
  json arr = json::array();
  for (const auto& f : fits) {
    arr.push_back({{"center_mhz", f.center_mhz},
                   {"fwhm_mhz", f.fwhm_mhz},
                   {"amplitude", f.amplitude},
                   {"shape", f.shape == spec::PeakShape::lorentzian ? "lorentzian" : "gaussian"},
                   {"significant", f.significant}});
  }
  json out = {{"peaks", arr}, {"converged", converged}};
  if (!fits.empty()) out["residual_norm"] = fits.front().residual_norm;
  if (fits.size() == 2) out["splitting_mhz"] = spec::zeeman_splitting(fits);
  return out;
}

struct OutputGuard {
  std::vector<std::string> written;
  bool committed = false;
  ~OutputGuard() {
    if (committed) return;
    for (const auto& p : written) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  }
};

}  // namespace

void RunConfig::validate() const {
  spin.validate();
  ensemble.validate();
  if (!field_mt.allFinite()) throw std::invalid_argument("config: field: non-finite component");
  if (!(b_mw_mt >= 0.0)) throw std::invalid_argument("config: drive.b_mw_mt must be >= 0");
  if (!(t_max_us > 0.0)) throw std::invalid_argument("config: simulation.t_max_us must be > 0");
  if (dt_us < 0.0) throw std::invalid_argument("config: simulation.dt_us must be >= 0");
  if (zero_pad < 1) throw std::invalid_argument("config: simulation.zero_pad must be >= 1");
  if (!(beta_pl >= 0.0 && beta_pl < 1.0))
    throw std::invalid_argument("config: simulation.beta_pl must be in [0, 1)");
  if (avg_window_us <= 0.0)
    throw std::invalid_argument("config: simulation.avg_window_us must be > 0");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::string trimmed = text;
  trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
  if (trimmed.empty()) {
    cfg.validate();
    return cfg;  // empty file: all defaults
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  expect_keys(j, "", {"spin", "ensemble", "field", "drive", "simulation", "outputs"});

  if (j.contains("spin")) {
    const auto& s = j.at("spin");
    expect_keys(s, "spin.", {"d_mhz", "e_mhz", "g_factor", "t1_us"});
    load(s, "d_mhz", cfg.spin.d_mhz);
    load(s, "e_mhz", cfg.spin.e_mhz);
    load(s, "g_factor", cfg.spin.g_factor);
    load(s, "t1_us", cfg.spin.t1_us);
  }
  if (j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    expect_keys(e, "ensemble.", {"n_random", "n_aligned", "seed", "aligned_azimuth"});
    load(e, "n_random", cfg.ensemble.n_random);
    load(e, "n_aligned", cfg.ensemble.n_aligned);
    load(e, "seed", cfg.ensemble.seed);
    if (e.contains("aligned_azimuth")) {
      const auto v = e.at("aligned_azimuth").get<std::string>();
      if (v == "fixed")
        cfg.ensemble.aligned_azimuth = orient::AlignedAzimuth::fixed;
      else if (v == "random")
        cfg.ensemble.aligned_azimuth = orient::AlignedAzimuth::random;
      else
        throw std::invalid_argument("config: ensemble.aligned_azimuth must be fixed|random");
    }
  }
  if (j.contains("field")) {
    const auto& f = j.at("field");
    expect_keys(f, "field.", {"bx", "by", "bz"});
    load(f, "bx", cfg.field_mt.x());
    load(f, "by", cfg.field_mt.y());
    load(f, "bz", cfg.field_mt.z());
  }
  if (j.contains("drive")) {
    const auto& d = j.at("drive");
    expect_keys(d, "drive.",
                {"b_mw_mt", "omega_start_mhz", "omega_stop_mhz", "omega_step_mhz",
                 "omega_list_mhz"});
    load(d, "b_mw_mt", cfg.b_mw_mt);
    if (d.contains("omega_list_mhz")) {
      cfg.omega_grid_mhz = d.at("omega_list_mhz").get<std::vector<double>>();
    } else if (d.contains("omega_start_mhz")) {
      const double start = d.at("omega_start_mhz").get<double>();
      const double stop = d.at("omega_stop_mhz").get<double>();
      const double step = d.at("omega_step_mhz").get<double>();
      if (!(step > 0.0) || !(stop >= start))
        throw std::invalid_argument("config: drive.omega_step_mhz/stop invalid");
      for (double w = start; w <= stop + 1e-9; w += step) cfg.omega_grid_mhz.push_back(w);
    }
  }
  if (j.contains("simulation")) {
    const auto& s = j.at("simulation");
    expect_keys(s, "simulation.",
                {"mode", "t_max_us", "dt_us", "window", "zero_pad", "settle_time_us",
                 "avg_window_us", "beta_pl"});
    if (s.contains("mode")) {
      const auto v = s.at("mode").get<std::string>();
      if (v == "fid")
        cfg.mode = inv::SimMode::fid;
      else if (v == "cw")
        cfg.mode = inv::SimMode::cw;
      else
        throw std::invalid_argument("config: simulation.mode must be fid|cw");
    }
    load(s, "t_max_us", cfg.t_max_us);
    load(s, "dt_us", cfg.dt_us);
    if (s.contains("window")) {
      const auto v = s.at("window").get<std::string>();
      if (v == "none")
        cfg.window = spec::FftWindow::none;
      else if (v == "hann")
        cfg.window = spec::FftWindow::hann;
      else
        throw std::invalid_argument("config: simulation.window must be none|hann");
    }
    load(s, "zero_pad", cfg.zero_pad);
    load(s, "settle_time_us", cfg.settle_time_us);
    load(s, "avg_window_us", cfg.avg_window_us);
    load(s, "beta_pl", cfg.beta_pl);
  }
  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    expect_keys(o, "outputs.", {"spectrum_csv", "fit_json", "manifest_json"});
    load(o, "spectrum_csv", cfg.spectrum_csv);
    load(o, "fit_json", cfg.fit_json);
    load(o, "manifest_json", cfg.manifest_json);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_canonical_json(const RunConfig& cfg) {
  json j;
  j["spin"] = {{"d_mhz", cfg.spin.d_mhz},
               {"e_mhz", cfg.spin.e_mhz},
               {"g_factor", cfg.spin.g_factor},
               {"t1_us", cfg.spin.t1_us}};
  j["ensemble"] = {
      {"n_random", cfg.ensemble.n_random},
      {"n_aligned", cfg.ensemble.n_aligned},
      {"seed", cfg.ensemble.seed},
      {"aligned_azimuth",
       cfg.ensemble.aligned_azimuth == orient::AlignedAzimuth::fixed ? "fixed" : "random"}};
  j["field"] = {{"bx", cfg.field_mt.x()}, {"by", cfg.field_mt.y()}, {"bz", cfg.field_mt.z()}};
  j["drive"] = {{"b_mw_mt", cfg.b_mw_mt}, {"omega_list_mhz", cfg.omega_grid_mhz}};
  j["simulation"] = {{"mode", cfg.mode == inv::SimMode::fid ? "fid" : "cw"},
                     {"t_max_us", cfg.t_max_us},
                     {"dt_us", cfg.dt_us},
                     {"window", cfg.window == spec::FftWindow::hann ? "hann" : "none"},
                     {"zero_pad", cfg.zero_pad},
                     {"settle_time_us", cfg.settle_time_us},
                     {"avg_window_us", cfg.avg_window_us},
                     {"beta_pl", cfg.beta_pl}};
  return j.dump();
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = config_canonical_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

int cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  OutputGuard guard;

  const auto ensemble = orient::build_ensemble(cfg.ensemble);
  spec::Spectrum spectrum;
  const double b_mag = cfg.field_mt.norm();
  if (cfg.mode == inv::SimMode::fid) {
    const double dt = cfg.dt_us > 0.0 ? cfg.dt_us : auto_fid_dt(cfg.spin, b_mag);
    const auto traj = lind::fid_signal(ensemble, cfg.spin, cfg.field_mt, cfg.t_max_us, dt);
    spectrum = spec::fft_spectrum(traj, cfg.window, cfg.zero_pad);
  } else {
    if (cfg.omega_grid_mhz.empty())
      throw std::invalid_argument("config: cw mode needs drive.omega_list_mhz or start/stop/step");
    const double dt = cfg.dt_us > 0.0
                          ? cfg.dt_us
                          : 0.5 / (22.0 * (cfg.spin.d_mhz + cfg.spin.e_mhz +
                                           2.0 * cfg.spin.gamma_mhz_per_mt() * b_mag +
                                           cfg.omega_grid_mhz.back()));
    const double settle =
        cfg.settle_time_us > 0.0 ? cfg.settle_time_us : 3.0 * cfg.spin.t1_us;
    spectrum = lind::cw_sweep(ensemble, cfg.spin, cfg.field_mt, cfg.b_mw_mt,
                              cfg.omega_grid_mhz, settle, cfg.avg_window_us, dt, cfg.beta_pl);
  }

  std::ostringstream csv;
  csv << "frequency_mhz,value\n";
  for (std::size_t i = 0; i < spectrum.freqs_mhz.size(); ++i)
    csv << fmt(spectrum.freqs_mhz[i], 6) << ',' << fmt(spectrum.values[i], 12) << '\n';
  write_file_atomic(cfg.spectrum_csv, csv.str());
  guard.written.push_back(cfg.spectrum_csv);

  const auto windowed =
      cfg.mode == inv::SimMode::fid ? zfs_window(spectrum, cfg.spin, b_mag) : spectrum;
  bool converged = true;
  std::vector<spec::PeakFit> fits;
  try {
    fits = spec::fit_peaks(windowed, 2, spec::PeakShape::lorentzian);
  } catch (const spec::FitUnconverged& e) {
    fits = e.best_fit;
    converged = false;
  }
  write_file_atomic(cfg.fit_json, peaks_to_json(fits, converged).dump(2) + "\n");
  guard.written.push_back(cfg.fit_json);

  json manifest = {{"tool_version", kVersion},
                   {"config_hash", config_hash(cfg)},
                   {"seed", cfg.ensemble.seed},
                   {"config", json::parse(config_canonical_json(cfg))},
                   {"outputs", {cfg.spectrum_csv, cfg.fit_json}}};
  write_file_atomic(cfg.manifest_json, manifest.dump(2) + "\n");
  guard.written.push_back(cfg.manifest_json);

  guard.committed = converged;
  if (!converged) {
    guard.committed = true;  // keep the best-so-far report, but signal failure
    return 2;
  }
  return 0;
}

int cmd_fit(const std::string& spectrum_csv, int n_peaks, spec::PeakShape shape,
            const std::string& out_json) {
  const auto s = spec::read_spectrum_csv(spectrum_csv);
  bool converged = true;
  std::vector<spec::PeakFit> fits;
  try {
    fits = spec::fit_peaks(s, n_peaks, shape);
  } catch (const spec::FitUnconverged& e) {
    fits = e.best_fit;
    converged = false;
  }
  write_file_atomic(out_json, peaks_to_json(fits, converged).dump(2) + "\n");
  return converged ? 0 : 2;
}

int cmd_sensitivity(double p_f, double linewidth_mhz, double contrast, double rate_hz,
                    double g_factor, const std::string& out_json) {
  sense::SensitivityInputs inp{p_f, linewidth_mhz, contrast, rate_hz};
  const double eta = sense::sensitivity_ut_per_sqrt_hz(inp, g_factor);
  std::printf("eta_B = %.3f uT/sqrt(Hz)\n", eta);
  if (!out_json.empty()) {
    json j = {{"eta_b_ut_per_sqrt_hz", eta},
              {"inputs",
               {{"p_f", p_f},
                {"linewidth_mhz", linewidth_mhz},
                {"contrast", contrast},
                {"count_rate_hz", rate_hz},
                {"g_factor", g_factor}}},
              {"tool_version", kVersion}};
    write_file_atomic(out_json, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_thermometry(const std::string& lattice_csv, double t_kelvin, double theta_a_ghz,
                    double theta_c_ghz, double d300_mhz, const std::string& out_json) {
  const auto table = sense::read_lattice_csv(lattice_csv);
  sense::ThermometryParams params;
  params.theta_a_ghz = theta_a_ghz;
  params.theta_c_ghz = theta_c_ghz;
  params.d300_mhz = d300_mhz;
  const auto shift = sense::zfs_shift(params, table, t_kelvin);
  std::printf("delta_D/h = %.6f MHz, D(T)/h = %.6f MHz\n", shift.delta_d_mhz, shift.d_mhz);
  if (!out_json.empty()) {
    json j = {{"t_kelvin", t_kelvin},
              {"delta_d_mhz", shift.delta_d_mhz},
              {"d_mhz", shift.d_mhz},
              {"eta_a", shift.eta_a},
              {"eta_c", shift.eta_c},
              {"tool_version", kVersion}};
    write_file_atomic(out_json, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_calibrate(const RunConfig& cfg, const inv::GridSpec& grid, const std::string& out_json) {
  cfg.validate();
  const auto ensemble = orient::build_ensemble(cfg.ensemble);
  inv::Fingerprint fp;
  fp.seed = cfg.ensemble.seed;
  fp.n_random = cfg.ensemble.n_random;
  fp.n_aligned = cfg.ensemble.n_aligned;
  fp.params_hash = inv::hash_params(cfg.spin);
  const auto table = inv::build_calibration(ensemble, cfg.spin, grid, fp);
  write_file_atomic(out_json, table.to_json() + "\n");
  return 0;
}

int cmd_invert(const std::vector<double>& features, const std::string& table_json_path,
               const std::string& out_json) {
  std::ifstream in(table_json_path);
  if (!in) throw std::invalid_argument("invert: cannot open " + table_json_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto table = inv::CalibrationTable::from_json(ss.str());

  json j;
  int rc = 0;
  auto fill = [&](const inv::FieldEstimate& est, bool confident) {
    j = {{"b_lab_mt", {est.b_lab_mt.x(), est.b_lab_mt.y(), est.b_lab_mt.z()}},
         {"b_mag_mt", est.b_mag_mt},
         {"theta_rad", est.theta_rad},
         {"phi_rad", est.phi_rad},
         {"residual", est.residual},
         {"confident", confident},
         {"sign_degenerate", est.sign_degenerate},
         {"azimuth_indeterminate", est.azimuth_indeterminate},
         {"direction_indeterminate", est.direction_indeterminate},
         {"tool_version", kVersion}};
    json eq = json::array();
    for (const auto& b : est.equivalent_fields_mt) eq.push_back({b.x(), b.y(), b.z()});
    j["equivalent_fields_mt"] = eq;
  };
  try {
    fill(inv::invert_field(features, table), true);
  } catch (const inv::NoConfidentEstimate& e) {
    fill(e.best_candidate, false);
    rc = 3;
  }
  std::printf("%s\n", j.dump(2).c_str());
  if (!out_json.empty()) write_file_atomic(out_json, j.dump(2) + "\n");
  return rc;
}

}  // namespace odmr::io
