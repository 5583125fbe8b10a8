#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <string>
#include <vector>

namespace odmr::orient {

using Eigen::Quaterniond;
using Eigen::Vector3d;

// SplitMix64: fixed, seedable, counter-based 64-bit generator.  Chosen so
// that ensembles are bit-reproducible across platforms and languages.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform double in [0, 1), 53-bit resolution
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// Unit rotation taking lab-frame vectors into a defect's principal frame.
struct DefectOrientation {
  Quaterniond rotation{1.0, 0.0, 0.0, 0.0};  // lab -> defect
  double weight = 1.0;
};

enum class AlignedAzimuth { fixed, random };

struct EnsembleSpec {
  int n_random = 1000;
  int n_aligned = 300;
  std::uint64_t seed = 0;
  // In-plane E-axis of the Z-aligned grains.  `random` (default) gives each
  // aligned grain a random azimuth about Z, since physical grains carry no
  // preferred in-plane axis; `fixed` uses the identity rotation.  The choice
  // affects spectra whenever B has in-plane components.
  AlignedAzimuth aligned_azimuth = AlignedAzimuth::random;

  void validate() const;
};

// One Haar-uniform rotation (Shoemake's uniform-quaternion construction,
// three uniform variates per sample).
DefectOrientation sample_uniform_rotation(SplitMix64& rng);

// n_random Haar-random orientations followed by n_aligned Z-aligned ones.
std::vector<DefectOrientation> build_ensemble(const EnsembleSpec& spec);

Vector3d lab_to_defect(const DefectOrientation& o, const Vector3d& v_lab);

// JSON round trip for exact ensemble reproduction.
std::string ensemble_to_json(const std::vector<DefectOrientation>& ensemble);
std::vector<DefectOrientation> ensemble_from_json(const std::string& json_text);

}  // namespace odmr::orient
