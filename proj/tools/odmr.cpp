// odmr: simulate, analyze and invert spin-1 ensemble ODMR spectra.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odmr/config.hpp"
#include "odmr/units.hpp"

namespace {

odmr::io::RunConfig load_config(const std::string& path_flag,
                                const std::optional<std::uint64_t>& seed_override) {
  std::string path = path_flag;
  if (path.empty()) {
    if (const char* env = std::getenv("ODMR_CONFIG")) path = env;
  }
  odmr::io::RunConfig cfg;
  if (!path.empty()) cfg = odmr::io::parse_config(path);
  if (seed_override) cfg.ensemble.seed = *seed_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ODMR simulator and analysis toolkit for spin-1 defect ensembles"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  app.add_option("--config", config_path, "JSON config file (default: $ODMR_CONFIG)");
  app.add_option("--seed", seed_override, "override the ensemble seed");

  auto* sim = app.add_subcommand("simulate", "forward-simulate a spectrum and fit its peaks");

  auto* fit = app.add_subcommand("fit", "fit peaks in a spectrum CSV");
  std::string fit_csv, fit_out = "fit.json", fit_shape = "lorentzian";
  int fit_npeaks = 2;
  fit->add_option("csv", fit_csv, "spectrum CSV (frequency_mhz,value|contrast)")->required();
  fit->add_option("--n-peaks", fit_npeaks, "number of peaks (1..4)");
  fit->add_option("--shape", fit_shape, "lorentzian|gaussian");
  fit->add_option("--out", fit_out, "output JSON path");

  auto* sens = app.add_subcommand("sensitivity", "magnetic sensitivity figure of merit");
  double p_f = 0.7, linewidth = 110.0, contrast = 0.019, rate = 516000.0, g = 2.0;
  std::string sens_out;
  sens->add_option("--p-f", p_f, "profile factor");
  sens->add_option("--linewidth-mhz", linewidth, "ODMR linewidth");
  sens->add_option("--contrast", contrast, "ODMR contrast, (0,1]");
  sens->add_option("--rate-hz", rate, "photon count rate");
  sens->add_option("--g-factor", g, "Lande g");
  sens->add_option("--out", sens_out, "output JSON path");

  auto* thermo = app.add_subcommand("thermometry", "temperature-dependent ZFS shift");
  std::string lattice_csv, thermo_out;
  double t_kelvin = 300.0, theta_a = -81.0, theta_c = -24.5, d300 = 3480.0;
  thermo->add_option("lattice_csv", lattice_csv, "temperature_k,a_angstrom,c_angstrom")
      ->required();
  thermo->add_option("--t-kelvin", t_kelvin, "target temperature")->required();
  thermo->add_option("--theta-a-ghz", theta_a, "theta_a coefficient");
  thermo->add_option("--theta-c-ghz", theta_c, "theta_c coefficient (a.k.a. theta_b)");
  thermo->add_option("--d300-mhz", d300, "D(300 K)/h");
  thermo->add_option("--out", thermo_out, "output JSON path");

  auto* cal = app.add_subcommand("calibrate", "build a field-inversion calibration table");
  double b_max = 3.0, b_step = 0.5, angle_step_deg = 15.0;
  bool cal_amplitudes = false;
  std::string cal_out = "calibration.json";
  cal->add_option("--b-max-mt", b_max, "maximum |B|");
  cal->add_option("--b-step-mt", b_step, "|B| grid spacing");
  cal->add_option("--angle-step-deg", angle_step_deg, "theta/phi grid spacing");
  cal->add_flag("--amplitudes", cal_amplitudes, "include peak amplitudes in features");
  cal->add_option("--out", cal_out, "output table JSON");

  auto* invc = app.add_subcommand("invert", "estimate a field vector from peak features");
  std::string table_path, invert_out;
  std::vector<double> features;
  invc->add_option("--table", table_path, "calibration table JSON")->required();
  invc->add_option("--features", features,
                   "feature vector: peak centers MHz descending, [amplitudes,] rms spread MHz")
      ->required();
  invc->add_option("--out", invert_out, "output JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return odmr::io::cmd_simulate(load_config(config_path, seed_override));
    if (*fit) {
      odmr::spec::PeakShape shape;
      if (fit_shape == "lorentzian")
        shape = odmr::spec::PeakShape::lorentzian;
      else if (fit_shape == "gaussian")
        shape = odmr::spec::PeakShape::gaussian;
      else
        throw std::invalid_argument("fit: --shape must be lorentzian|gaussian");
      return odmr::io::cmd_fit(fit_csv, fit_npeaks, shape, fit_out);
    }
    if (*sens) return odmr::io::cmd_sensitivity(p_f, linewidth, contrast, rate, g, sens_out);
    if (*thermo)
      return odmr::io::cmd_thermometry(lattice_csv, t_kelvin, theta_a, theta_c, d300,
                                       thermo_out);
    if (*cal) {
      auto cfg = load_config(config_path, seed_override);
      auto grid = odmr::inv::GridSpec::regular(b_max, b_step,
                                               angle_step_deg * M_PI / 180.0);
      grid.include_amplitudes = cal_amplitudes;
      return odmr::io::cmd_calibrate(cfg, grid, cal_out);
    }
    if (*invc) return odmr::io::cmd_invert(features, table_path, invert_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
