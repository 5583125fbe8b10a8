#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "odmr/inversion.hpp"
#include "odmr/lindblad.hpp"

namespace odmr::io {

// Full run description; defaults mirror the reference defect parameters
// (D/h = 3480 MHz, E/h = 60 MHz, g = 2, T1 = 14 us, 1000 random + 300
// Z-aligned grains).
struct RunConfig {
  spin::SpinParams spin;
  orient::EnsembleSpec ensemble;
  Eigen::Vector3d field_mt = Eigen::Vector3d::Zero();

  // drive
  double b_mw_mt = 0.1;
  std::vector<double> omega_grid_mhz;  // explicit list, or built from start/stop/step

  // simulation
  inv::SimMode mode = inv::SimMode::fid;
  double t_max_us = 2.0;
  double dt_us = 0.0;  // 0 = auto
  spec::FftWindow window = spec::FftWindow::hann;
  int zero_pad = 4;
  double settle_time_us = 0.0;  // 0 = 3*T1
  double avg_window_us = 2.0;
  double beta_pl = 0.6;

  // outputs
  std::string spectrum_csv = "spectrum.csv";
  std::string fit_json = "fit.json";
  std::string manifest_json = "manifest.json";

  void validate() const;
};

// JSON config file; unknown keys are rejected with their key path, values
// are validated with field-level messages.  An empty file means all
// defaults.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

std::string config_canonical_json(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

// atomic write: temp file + rename
void write_file_atomic(const std::string& path, const std::string& content);

// subcommand drivers (shared between the CLI binary and tests)
int cmd_simulate(const RunConfig& cfg);
int cmd_fit(const std::string& spectrum_csv, int n_peaks, spec::PeakShape shape,
            const std::string& out_json);
int cmd_sensitivity(double p_f, double linewidth_mhz, double contrast, double rate_hz,
                    double g_factor, const std::string& out_json);
int cmd_thermometry(const std::string& lattice_csv, double t_kelvin, double theta_a_ghz,
                    double theta_c_ghz, double d300_mhz, const std::string& out_json);
int cmd_calibrate(const RunConfig& cfg, const inv::GridSpec& grid, const std::string& out_json);
int cmd_invert(const std::vector<double>& features, const std::string& table_json_path,
               const std::string& out_json);

}  // namespace odmr::io
