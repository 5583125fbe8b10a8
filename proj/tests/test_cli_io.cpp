#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "odmr/config.hpp"

using namespace odmr;
using io::RunConfig;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty config text means defaults") {
  const auto cfg = io::parse_config_text("  \n");
  CHECK(cfg.spin.d_mhz == doctest::Approx(3480.0));
  CHECK(cfg.spin.e_mhz == doctest::Approx(60.0));
  CHECK(cfg.spin.t1_us == doctest::Approx(14.0));
  CHECK(cfg.ensemble.n_random == 1000);
  CHECK(cfg.ensemble.n_aligned == 300);
  CHECK(cfg.mode == inv::SimMode::fid);
  CHECK(cfg.field_mt.norm() == 0.0);
}

TEST_CASE("unknown keys are rejected with their path") {
  const auto msg =
      message_of([] { io::parse_config_text(R"({"spin": {"dmhz": 3000}})"); });
  CHECK(msg.find("spin.dmhz") != std::string::npos);
  const auto top = message_of([] { io::parse_config_text(R"({"spins": {}})"); });
  CHECK(top.find("spins") != std::string::npos);
}

TEST_CASE("invalid values are rejected with field-level messages") {
  const auto msg =
      message_of([] { io::parse_config_text(R"({"spin": {"e_mhz": -5.0}})"); });
  CHECK(msg.find("e_mhz") != std::string::npos);
  CHECK_THROWS_AS(io::parse_config_text(R"({"simulation": {"mode": "pulsed"}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(io::parse_config_text(R"({"simulation": {"t_max_us": -1.0}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(io::parse_config_text("{nope"), std::invalid_argument);
}

TEST_CASE("partial field specification keeps other components at zero") {
  const auto cfg = io::parse_config_text(R"({"field": {"bz": 3.2}})");
  CHECK(cfg.field_mt.x() == 0.0);
  CHECK(cfg.field_mt.y() == 0.0);
  CHECK(cfg.field_mt.z() == doctest::Approx(3.2));
}

TEST_CASE("drive grid from start/stop/step") {
  const auto cfg = io::parse_config_text(
      R"({"drive": {"omega_start_mhz": 3400, "omega_stop_mhz": 3410, "omega_step_mhz": 5}})");
  REQUIRE(cfg.omega_grid_mhz.size() == 3);
  CHECK(cfg.omega_grid_mhz[2] == doctest::Approx(3410.0));
  CHECK_THROWS_AS(io::parse_config_text(
                      R"({"drive": {"omega_start_mhz": 3400, "omega_stop_mhz": 3300,
                          "omega_step_mhz": 5}})"),
                  std::invalid_argument);
}

TEST_CASE("aligned azimuth parsing") {
  const auto cfg =
      io::parse_config_text(R"({"ensemble": {"aligned_azimuth": "fixed"}})");
  CHECK(cfg.ensemble.aligned_azimuth == orient::AlignedAzimuth::fixed);
  CHECK_THROWS_AS(io::parse_config_text(R"({"ensemble": {"aligned_azimuth": "twisty"}})"),
                  std::invalid_argument);
}

TEST_CASE("config hash is stable and input sensitive") {
  const auto a = io::parse_config_text("");
  auto b = a;
  CHECK(io::config_hash(a) == io::config_hash(b));
  b.spin.d_mhz += 1.0;
  CHECK(io::config_hash(a) != io::config_hash(b));
}

TEST_CASE("atomic write replaces content and leaves no temp file") {
  const std::string path = "/tmp/odmr_cli_atomic.txt";
  io::write_file_atomic(path, "one");
  io::write_file_atomic(path, "two");
  CHECK(slurp(path) == "two");
  std::ifstream tmp(path + ".tmp");
  CHECK_FALSE(tmp.good());
  std::remove(path.c_str());
}

TEST_CASE("simulate produces byte-identical outputs for the same config") {
  RunConfig cfg = io::parse_config_text(R"({
    "ensemble": {"n_random": 2, "n_aligned": 2, "seed": 12345},
    "field": {"bz": 1.0},
    "simulation": {"t_max_us": 0.5}
  })");
  cfg.spectrum_csv = "/tmp/odmr_cli_spectrum.csv";
  cfg.fit_json = "/tmp/odmr_cli_fit.json";
  cfg.manifest_json = "/tmp/odmr_cli_manifest.json";

  REQUIRE(io::cmd_simulate(cfg) == 0);
  const auto csv1 = slurp(cfg.spectrum_csv);
  const auto fit1 = slurp(cfg.fit_json);
  const auto man1 = slurp(cfg.manifest_json);

  REQUIRE(io::cmd_simulate(cfg) == 0);
  CHECK(slurp(cfg.spectrum_csv) == csv1);
  CHECK(slurp(cfg.fit_json) == fit1);
  CHECK(slurp(cfg.manifest_json) == man1);

  SUBCASE("outputs parse and carry the run provenance") {
    const auto man = json::parse(man1);
    CHECK(man.at("seed").get<std::uint64_t>() == 12345);
    CHECK(man.at("config_hash").get<std::uint64_t>() == io::config_hash(cfg));
    const auto fit = json::parse(fit1);
    CHECK(fit.at("converged").get<bool>());
    REQUIRE(fit.at("peaks").size() == 2);
    CHECK(fit.contains("splitting_mhz"));
    // spectrum CSV round-trips through the reader
    const auto s = spec::read_spectrum_csv(cfg.spectrum_csv);
    CHECK(s.freqs_mhz.size() > 100);
  }

  std::remove(cfg.spectrum_csv.c_str());
  std::remove(cfg.fit_json.c_str());
  std::remove(cfg.manifest_json.c_str());
}

TEST_CASE("fit subcommand on a synthetic contrast spectrum") {
  const std::string csv = "/tmp/odmr_cli_synth.csv";
  {
    std::ofstream out(csv);
    out << "frequency_mhz,contrast\n";
    for (int i = 0; i < 200; ++i) {
      const double f = 3200.0 + 3.0 * i;
      auto lor = [&](double c) {
        const double u = 2.0 * (f - c) / 90.0;
        return 1.0 / (1.0 + u * u);
      };
      out << f << ',' << 0.02 * lor(3420.0) + 0.015 * lor(3540.0) << '\n';
    }
  }
  const std::string out_json = "/tmp/odmr_cli_synth_fit.json";
  CHECK(io::cmd_fit(csv, 2, spec::PeakShape::lorentzian, out_json) == 0);
  const auto j = json::parse(slurp(out_json));
  CHECK(j.at("splitting_mhz").get<double>() == doctest::Approx(120.0).epsilon(1e-3));
  std::remove(csv.c_str());
  std::remove(out_json.c_str());
}

TEST_CASE("sensitivity subcommand") {
  const std::string out_json = "/tmp/odmr_cli_eta.json";
  CHECK(io::cmd_sensitivity(0.7, 110.0, 0.019, 516000.0, 2.0, out_json) == 0);
  const auto j = json::parse(slurp(out_json));
  CHECK(j.at("eta_b_ut_per_sqrt_hz").get<double>() == doctest::Approx(201.55).epsilon(1e-3));
  std::remove(out_json.c_str());
}

TEST_CASE("thermometry subcommand") {
  const std::string csv = "/tmp/odmr_cli_lattice.csv";
  {
    std::ofstream out(csv);
    out << "temperature_k,a_angstrom,c_angstrom\n";
    out << "200,2.50150,6.64770\n300,2.50400,6.66100\n";
  }
  const std::string out_json = "/tmp/odmr_cli_thermo.json";
  CHECK(io::cmd_thermometry(csv, 200.0, -81.0, -24.5, 3480.0, out_json) == 0);
  const auto j = json::parse(slurp(out_json));
  // eta_a ~ -1e-3, eta_c ~ -2e-3 -> +130 MHz shift
  CHECK(j.at("delta_d_mhz").get<double>() == doctest::Approx(130.0).epsilon(1e-2));
  CHECK(j.at("d_mhz").get<double>() == doctest::Approx(3610.0).epsilon(1e-2));
  std::remove(csv.c_str());
  std::remove(out_json.c_str());
}
