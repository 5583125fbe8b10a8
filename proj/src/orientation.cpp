#include "odmr/orientation.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "odmr/units.hpp"

namespace odmr::orient {

void EnsembleSpec::validate() const {
  if (n_random < 0 || n_aligned < 0)
    throw std::invalid_argument("EnsembleSpec: negative count");
  if (n_random + n_aligned < 1)
    throw std::invalid_argument("EnsembleSpec: ensemble must contain at least one defect");
}

DefectOrientation sample_uniform_rotation(SplitMix64& rng) {
  // Shoemake: three uniforms -> uniform unit quaternion
  const double u1 = rng.next_double();
  const double u2 = rng.next_double();
  const double u3 = rng.next_double();
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double t2 = units::two_pi * u2;
  const double t3 = units::two_pi * u3;
  DefectOrientation o;
  o.rotation = Quaterniond(a * std::sin(t2), a * std::cos(t2),
                           b * std::sin(t3), b * std::cos(t3));
  o.rotation.normalize();
  return o;
}

std::vector<DefectOrientation> build_ensemble(const EnsembleSpec& spec) {
  spec.validate();
  SplitMix64 rng(spec.seed);
  std::vector<DefectOrientation> out;
  out.reserve(static_cast<std::size_t>(spec.n_random + spec.n_aligned));
  for (int i = 0; i < spec.n_random; ++i) out.push_back(sample_uniform_rotation(rng));
  for (int i = 0; i < spec.n_aligned; ++i) {
    DefectOrientation o;
    if (spec.aligned_azimuth == AlignedAzimuth::random) {
      const double phi = units::two_pi * rng.next_double();
      o.rotation = Quaterniond(Eigen::AngleAxisd(phi, Vector3d::UnitZ()));
    }
    out.push_back(o);
  }
  return out;
}

Vector3d lab_to_defect(const DefectOrientation& o, const Vector3d& v_lab) {
  if (!v_lab.allFinite()) throw std::invalid_argument("lab_to_defect: non-finite vector");
  return o.rotation * v_lab;
}

std::string ensemble_to_json(const std::vector<DefectOrientation>& ensemble) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& o : ensemble) {
    arr.push_back({{"q", {o.rotation.w(), o.rotation.x(), o.rotation.y(), o.rotation.z()}},
                   {"weight", o.weight}});
  }
  return nlohmann::json{{"orientations", arr}}.dump(2);
}

std::vector<DefectOrientation> ensemble_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  std::vector<DefectOrientation> out;
  for (const auto& item : j.at("orientations")) {
    const auto& q = item.at("q");
    DefectOrientation o;
    o.rotation = Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                             q.at(2).get<double>(), q.at(3).get<double>());
    o.weight = item.at("weight").get<double>();
    if (std::abs(o.rotation.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("ensemble_from_json: quaternion not unit norm");
    out.push_back(o);
  }
  if (out.empty()) throw std::invalid_argument("ensemble_from_json: empty ensemble");
  return out;
}

}  // namespace odmr::orient
