#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "odmr/sensing.hpp"

using namespace odmr;
using sense::LatticeTable;
using sense::SensitivityInputs;
using sense::ThermometryParams;

namespace {

// lattice parameters linear in T so the expected shift has a closed form
LatticeTable linear_table(double alpha_a, double alpha_c, double t_lo = 10.0,
                          double t_hi = 400.0) {
  LatticeTable t;
  const double a300 = 2.504, c300 = 6.661;
  for (double temp = t_lo; temp <= t_hi + 0.5; temp += 10.0) {
    t.temperature_k.push_back(temp);
    t.a_angstrom.push_back(a300 * (1.0 + alpha_a * (temp - 300.0)));
    t.c_angstrom.push_back(c300 * (1.0 + alpha_c * (temp - 300.0)));
  }
  return t;
}

}  // namespace

TEST_CASE("sensitivity with measured inputs lands near 200 uT/sqrt(Hz)") {
  const SensitivityInputs inp;  // defaults are the measured values
  const double eta = sense::sensitivity_ut_per_sqrt_hz(inp, 2.0);
  CHECK(eta == doctest::Approx(201.55).epsilon(1e-3));
  CHECK(std::abs(eta - 200.0) / 200.0 < 0.02);
}

TEST_CASE("sensitivity scaling laws") {
  SensitivityInputs inp;
  const double base = sense::sensitivity_ut_per_sqrt_hz(inp, 2.0);

  SensitivityInputs v = inp;
  v.contrast *= 2.0;
  CHECK(sense::sensitivity_ut_per_sqrt_hz(v, 2.0) == doctest::Approx(base / 2.0));

  v = inp;
  v.count_rate_hz *= 4.0;
  CHECK(sense::sensitivity_ut_per_sqrt_hz(v, 2.0) == doctest::Approx(base / 2.0));

  v = inp;
  v.linewidth_mhz *= 3.0;
  CHECK(sense::sensitivity_ut_per_sqrt_hz(v, 2.0) == doctest::Approx(3.0 * base));

  v = inp;
  v.p_f *= 0.5;
  CHECK(sense::sensitivity_ut_per_sqrt_hz(v, 2.0) == doctest::Approx(base / 2.0));

  CHECK(sense::sensitivity_ut_per_sqrt_hz(inp, 4.0) == doctest::Approx(base / 2.0));
}

TEST_CASE("sensitivity input validation") {
  SensitivityInputs inp;
  inp.contrast = 0.0;
  CHECK_THROWS_AS(sense::sensitivity_ut_per_sqrt_hz(inp, 2.0), std::invalid_argument);
  inp = SensitivityInputs{};
  inp.contrast = 1.5;
  CHECK_THROWS_AS(sense::sensitivity_ut_per_sqrt_hz(inp, 2.0), std::invalid_argument);
  inp = SensitivityInputs{};
  CHECK_THROWS_AS(sense::sensitivity_ut_per_sqrt_hz(inp, 0.0), std::invalid_argument);
  inp.count_rate_hz = -1.0;
  CHECK_THROWS_AS(sense::sensitivity_ut_per_sqrt_hz(inp, 2.0), std::invalid_argument);
}

TEST_CASE("saturation curve") {
  const double i_sat = 3.0, p_sat = 0.8;
  // half the saturated value at p = p_sat
  CHECK(sense::saturation_intensity(i_sat, p_sat, p_sat) == doctest::Approx(i_sat / 2.0));
  // approaches i_sat at large power
  CHECK(sense::saturation_intensity(i_sat, p_sat, 1e9 * p_sat) ==
        doctest::Approx(i_sat).epsilon(1e-8));
  // linear regime: I ~ (i_sat/p_sat) * p to within 1% at p = 0.01 p_sat
  const double p = 0.01 * p_sat;
  const double linear = i_sat * p / p_sat;
  CHECK(sense::saturation_intensity(i_sat, p_sat, p) == doctest::Approx(linear).epsilon(0.011));
  // monotone increasing in p
  CHECK(sense::saturation_intensity(i_sat, p_sat, 2.0) >
        sense::saturation_intensity(i_sat, p_sat, 1.0));
  CHECK_THROWS_AS(sense::saturation_intensity(i_sat, p_sat, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sense::saturation_intensity(-1.0, p_sat, 1.0), std::invalid_argument);
}

TEST_CASE("zfs shift vanishes at the 300 K reference") {
  const auto table = linear_table(-2e-6, -5e-6);
  const auto z = sense::zfs_shift(ThermometryParams{}, table, 300.0);
  CHECK(std::abs(z.delta_d_mhz) < 1e-12);
  CHECK(z.d_mhz == doctest::Approx(3480.0));
  CHECK(std::abs(z.eta_a) < 1e-15);
  CHECK(std::abs(z.eta_c) < 1e-15);
}

TEST_CASE("zfs shift with prescribed lattice contractions") {
  // eta_a = -1e-3 and eta_c = -2e-3 give
  // delta_D = (-81)(-1e-3) + (-24.5)(-2e-3) GHz = 130 MHz
  const double dT = -100.0;
  const auto table = linear_table(1e-5, 2e-5);  // at 200 K: eta_a = -1e-3, eta_c = -2e-3
  const auto z = sense::zfs_shift(ThermometryParams{}, table, 300.0 + dT);
  CHECK(z.eta_a == doctest::Approx(-1e-3).epsilon(1e-9));
  CHECK(z.eta_c == doctest::Approx(-2e-3).epsilon(1e-9));
  CHECK(z.delta_d_mhz == doctest::Approx(130.0).epsilon(1e-9));
  CHECK(z.d_mhz == doctest::Approx(3610.0).epsilon(1e-9));
}

TEST_CASE("zfs shift is linear in the coupling constants") {
  const auto table = linear_table(3e-6, 7e-6);
  ThermometryParams p1, p2, sum;
  p1.theta_a_ghz = -50.0;
  p1.theta_c_ghz = 0.0;
  p2.theta_a_ghz = 0.0;
  p2.theta_c_ghz = -30.0;
  sum.theta_a_ghz = -50.0;
  sum.theta_c_ghz = -30.0;
  for (double t : {50.0, 150.0, 250.0, 350.0}) {
    const double lhs = sense::zfs_shift(sum, table, t).delta_d_mhz;
    const double rhs =
        sense::zfs_shift(p1, table, t).delta_d_mhz + sense::zfs_shift(p2, table, t).delta_d_mhz;
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("lattice table validation and interpolation") {
  auto table = linear_table(-2e-6, -5e-6);
  CHECK_THROWS_AS(table.a_at(5.0), std::out_of_range);
  CHECK_THROWS_AS(table.c_at(500.0), std::out_of_range);
  CHECK_THROWS_AS(sense::zfs_shift(ThermometryParams{}, table, 1000.0), std::out_of_range);

  // interpolation is exact for linear data between nodes
  CHECK(table.a_at(305.0) == doctest::Approx(2.504 * (1.0 - 2e-6 * 5.0)).epsilon(1e-12));

  LatticeTable bad = table;
  bad.temperature_k[3] = bad.temperature_k[2];
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  LatticeTable no_ref = linear_table(1e-6, 1e-6, 10.0, 200.0);
  CHECK_THROWS_AS(no_ref.validate(), std::invalid_argument);

  LatticeTable short_table;
  short_table.temperature_k = {300.0};
  short_table.a_angstrom = {2.5};
  short_table.c_angstrom = {6.6};
  CHECK_THROWS_AS(short_table.validate(), std::invalid_argument);
}

TEST_CASE("lattice csv reader") {
  const std::string path = "/tmp/odmr_test_lattice.csv";
  {
    std::ofstream out(path);
    out << "temperature_k,a_angstrom,c_angstrom\n";
    out << "100,2.5030,6.6450\n200,2.5035,6.6520\n300,2.5040,6.6610\n400,2.5046,6.6700\n";
  }
  const auto table = sense::read_lattice_csv(path);
  REQUIRE(table.temperature_k.size() == 4);
  CHECK(table.a_at(300.0) == doctest::Approx(2.5040));
  CHECK(table.c_at(150.0) == doctest::Approx(0.5 * (6.6450 + 6.6520)).epsilon(1e-12));

  SUBCASE("bad header") {
    std::ofstream out(path);
    out << "temp,a,c\n300,2.5,6.6\n";
    out.close();
    CHECK_THROWS_AS(sense::read_lattice_csv(path), std::invalid_argument);
  }
  SUBCASE("bad row") {
    std::ofstream out(path);
    out << "temperature_k,a_angstrom,c_angstrom\n300,2.5\n";
    out.close();
    CHECK_THROWS_AS(sense::read_lattice_csv(path), std::invalid_argument);
  }
  std::remove(path.c_str());
}
