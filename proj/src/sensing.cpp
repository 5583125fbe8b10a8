#include "odmr/sensing.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "odmr/units.hpp"

namespace odmr::sense {

void SensitivityInputs::validate() const {
  if (!(p_f > 0.0)) throw std::invalid_argument("SensitivityInputs: p_f must be > 0");
  if (!(linewidth_mhz > 0.0))
    throw std::invalid_argument("SensitivityInputs: linewidth_mhz must be > 0");
  if (!(contrast > 0.0 && contrast <= 1.0))
    throw std::invalid_argument("SensitivityInputs: contrast must be in (0, 1]");
  if (!(count_rate_hz > 0.0))
    throw std::invalid_argument("SensitivityInputs: count_rate_hz must be > 0");
}

double sensitivity_ut_per_sqrt_hz(const SensitivityInputs& inp, double g_factor) {
  inp.validate();
  if (!(g_factor > 0.0)) throw std::invalid_argument("sensitivity: g_factor must be > 0");
  const double gamma_mhz_per_mt = g_factor * units::mu_b_mhz_per_mt;
  // mT/sqrt(Hz), then to uT
  const double eta_mt = inp.p_f * (inp.linewidth_mhz / gamma_mhz_per_mt) /
                        (inp.contrast * std::sqrt(inp.count_rate_hz));
  return eta_mt * 1e3;
}

double saturation_intensity(double i_sat, double p_sat, double p) {
  if (!(i_sat > 0.0)) throw std::invalid_argument("saturation_intensity: i_sat must be > 0");
  if (!(p_sat > 0.0)) throw std::invalid_argument("saturation_intensity: p_sat must be > 0");
  if (!(p > 0.0)) throw std::invalid_argument("saturation_intensity: p must be > 0");
  return i_sat / (1.0 + p_sat / p);
}

void LatticeTable::validate() const {
  const std::size_t n = temperature_k.size();
  if (n < 2 || a_angstrom.size() != n || c_angstrom.size() != n)
    throw std::invalid_argument("LatticeTable: need >= 2 consistent rows");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(a_angstrom[i] > 0.0) || !(c_angstrom[i] > 0.0))
      throw std::invalid_argument("LatticeTable: lattice parameters must be > 0");
    if (i > 0 && !(temperature_k[i] > temperature_k[i - 1]))
      throw std::invalid_argument("LatticeTable: temperatures must be strictly increasing");
  }
  if (temperature_k.front() > 300.0 || temperature_k.back() < 300.0)
    throw std::invalid_argument("LatticeTable: must cover the 300 K reference point");
}

namespace {
double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x < xs.front() || x > xs.back())
    throw std::out_of_range("LatticeTable: temperature outside table range (no extrapolation)");
  const auto it = std::lower_bound(xs.begin(), xs.end(), x);
  if (it == xs.begin()) return ys.front();
  const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  const std::size_t lo = hi - 1;
  const double f = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + f * (ys[hi] - ys[lo]);
}
}  // namespace

double LatticeTable::a_at(double t_kelvin) const { return interp(temperature_k, a_angstrom, t_kelvin); }
double LatticeTable::c_at(double t_kelvin) const { return interp(temperature_k, c_angstrom, t_kelvin); }

LatticeTable read_lattice_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("read_lattice_csv: cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != "temperature_k,a_angstrom,c_angstrom")
    throw std::invalid_argument("read_lattice_csv: bad header '" + header + "'");
  LatticeTable table;
  std::string line;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double t, a, c;
    char c1, c2;
    if (!(ls >> t >> c1 >> a >> c2 >> c) || c1 != ',' || c2 != ',')
      throw std::invalid_argument("read_lattice_csv: bad row " + std::to_string(row));
    table.temperature_k.push_back(t);
    table.a_angstrom.push_back(a);
    table.c_angstrom.push_back(c);
  }
  table.validate();
  return table;
}

ZfsShift zfs_shift(const ThermometryParams& params, const LatticeTable& table,
                   double t_kelvin) {
  table.validate();
  ZfsShift out;
  const double a300 = table.a_at(300.0);
  const double c300 = table.c_at(300.0);
  out.eta_a = (table.a_at(t_kelvin) - a300) / a300;
  out.eta_c = (table.c_at(t_kelvin) - c300) / c300;
  out.delta_d_mhz = 1e3 * (params.theta_a_ghz * out.eta_a + params.theta_c_ghz * out.eta_c);
  out.d_mhz = params.d300_mhz + out.delta_d_mhz;
  return out;
}

}  // namespace odmr::sense
