#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "odmr/orientation.hpp"

using namespace odmr;
using orient::AlignedAzimuth;
using orient::DefectOrientation;
using orient::EnsembleSpec;
using orient::SplitMix64;
using Eigen::Vector3d;

TEST_CASE("uniform rotation sampling is deterministic per seed") {
  SplitMix64 a(1234), b(1234);
  const auto oa = orient::sample_uniform_rotation(a);
  const auto ob = orient::sample_uniform_rotation(b);
  CHECK(oa.rotation.coeffs() == ob.rotation.coeffs());
  CHECK(std::abs(oa.rotation.norm() - 1.0) < 1e-12);
}

TEST_CASE("rotations are isometries") {
  SplitMix64 rng(99);
  for (int i = 0; i < 100; ++i) {
    const auto o = orient::sample_uniform_rotation(rng);
    const Vector3d v(rng.next_double() - 0.5, rng.next_double() - 0.5, rng.next_double() - 0.5);
    CHECK(std::abs(orient::lab_to_defect(o, v).norm() - v.norm()) < 1e-12);
  }
}

TEST_CASE("explicit rotations") {
  DefectOrientation id;
  CHECK((orient::lab_to_defect(id, Vector3d(0, 0, 3.2)) - Vector3d(0, 0, 3.2)).norm() < 1e-15);

  DefectOrientation flip;
  flip.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI, Vector3d::UnitX()));
  CHECK((orient::lab_to_defect(flip, Vector3d(0, 0, 1)) - Vector3d(0, 0, -1)).norm() < 1e-12);
}

TEST_CASE("isotropy statistics of the rotated z axis") {
  SplitMix64 rng(2024);
  const int n = 100000;
  Vector3d mean = Vector3d::Zero();
  int cap_count = 0;
  std::vector<double> zs;
  zs.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto o = orient::sample_uniform_rotation(rng);
    const Vector3d r = o.rotation * Vector3d::UnitZ();
    mean += r;
    if (r.z() > 0.5) ++cap_count;
    zs.push_back(r.z());
  }
  mean /= static_cast<double>(n);
  // statistical bound ~3/sqrt(N) on the mean of isotropic unit vectors
  CHECK(mean.norm() < 0.02);
  // spherical cap area (1 - cos theta)/2 at cos theta = 0.5
  CHECK(static_cast<double>(cap_count) / n == doctest::Approx(0.25).epsilon(0.04));

  // Kolmogorov-Smirnov against uniform z in [-1, 1]
  std::sort(zs.begin(), zs.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = 0.5 * (zs[static_cast<std::size_t>(i)] + 1.0);
    const double lo = static_cast<double>(i) / n, hi = static_cast<double>(i + 1) / n;
    ks = std::max({ks, std::abs(cdf - lo), std::abs(cdf - hi)});
  }
  CHECK(ks < 0.01);
}

TEST_CASE("build_ensemble layout and determinism") {
  SUBCASE("aligned-only with fixed azimuth gives identity rotations") {
    EnsembleSpec spec;
    spec.n_random = 0;
    spec.n_aligned = 5;
    spec.seed = 77;
    spec.aligned_azimuth = AlignedAzimuth::fixed;
    const auto e = orient::build_ensemble(spec);
    REQUIRE(e.size() == 5);
    for (const auto& o : e)
      CHECK(std::abs(o.rotation.angularDistance(Eigen::Quaterniond::Identity())) < 1e-15);
  }
  SUBCASE("default counts 1000 + 300, aligned tail keeps the lab Z axis") {
    EnsembleSpec spec;
    spec.seed = 42;
    const auto e = orient::build_ensemble(spec);
    REQUIRE(e.size() == 1300);
    for (std::size_t i = 1000; i < 1300; ++i) {
      const Vector3d z = orient::lab_to_defect(e[i], Vector3d::UnitZ());
      CHECK((z - Vector3d::UnitZ()).norm() < 1e-12);
    }
  }
  SUBCASE("bitwise reproducibility from seed") {
    EnsembleSpec spec;
    spec.n_random = 50;
    spec.n_aligned = 10;
    spec.seed = 7;
    const auto a = orient::build_ensemble(spec);
    const auto b = orient::build_ensemble(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i].rotation.coeffs() == b[i].rotation.coeffs());
  }
  SUBCASE("empty ensemble rejected") {
    EnsembleSpec spec;
    spec.n_random = 0;
    spec.n_aligned = 0;
    CHECK_THROWS_AS(orient::build_ensemble(spec), std::invalid_argument);
  }
}

TEST_CASE("ensemble JSON round trip") {
  EnsembleSpec spec;
  spec.n_random = 8;
  spec.n_aligned = 2;
  spec.seed = 3;
  const auto e = orient::build_ensemble(spec);
  const auto back = orient::ensemble_from_json(orient::ensemble_to_json(e));
  REQUIRE(back.size() == e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK((back[i].rotation.coeffs() - e[i].rotation.coeffs()).norm() < 1e-15);
    CHECK(back[i].weight == e[i].weight);
  }
}
