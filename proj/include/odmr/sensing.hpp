#pragma once

#include <string>
#include <vector>

namespace odmr::sense {

struct SensitivityInputs {
  double p_f = 0.7;            // Gaussian-profile factor
  double linewidth_mhz = 110.0;
  double contrast = 0.019;     // dimensionless, in (0, 1]
  double count_rate_hz = 516000.0;

  void validate() const;
};

// eta_B = p_f * h/(g mu_B) * linewidth / (contrast * sqrt(rate)), in uT/sqrt(Hz)
double sensitivity_ut_per_sqrt_hz(const SensitivityInputs& inp, double g_factor);

// I = i_sat / (1 + p_sat/p)
double saturation_intensity(double i_sat, double p_sat, double p);

struct LatticeTable {
  std::vector<double> temperature_k;  // strictly increasing
  std::vector<double> a_angstrom;
  std::vector<double> c_angstrom;

  void validate() const;  // also requires 300 K inside the covered range
  double a_at(double t_kelvin) const;
  double c_at(double t_kelvin) const;
};

LatticeTable read_lattice_csv(const std::string& path);

struct ThermometryParams {
  double theta_a_ghz = -81.0;    // +-12 GHz in the source data
  double theta_c_ghz = -24.5;    // +-0.8 GHz
  double d300_mhz = 3480.0;      // D(300 K)/h
};

struct ZfsShift {
  double delta_d_mhz = 0.0;  // D(T)/h - D(300 K)/h
  double d_mhz = 0.0;        // D(T)/h
  double eta_a = 0.0;
  double eta_c = 0.0;
};

// delta_D/h = theta_a*eta_a + theta_c*eta_c with eta_x the fractional lattice
// parameter change relative to 300 K; linear interpolation within the table,
// no extrapolation.
ZfsShift zfs_shift(const ThermometryParams& params, const LatticeTable& table,
                   double t_kelvin);

}  // namespace odmr::sense
