#include "biphoton/geometry.hpp"

#include <cmath>
#include <string>

#include "biphoton/error.hpp"

namespace biphoton {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string(name) + " must be strictly positive and finite");
  }
}

void check_detector_index(int which) {
  if (which != 1 && which != 2) {
    throw ConfigError("detector index must be 1 or 2, got " + std::to_string(which));
  }
}

}  // namespace

void ApparatusConfig::validate() const {
  require_positive(wavelength, "wavelength");
  require_positive(pump_wavelength, "pump_wavelength");
  require_positive(slit_width_w, "slit_width_w");
  require_positive(slit_separation_s, "slit_separation_s");
  require_positive(detector1_distance_L1, "detector1_distance_L1");
  require_positive(detector2_distance_L2, "detector2_distance_L2");
  require_positive(iris_diameter, "iris_diameter");
  require_positive(angular_dispersion, "angular_dispersion");
  if (!(filter_fwhm >= 0.0) || !std::isfinite(filter_fwhm)) {
    throw ConfigError("filter_fwhm must be non-negative");
  }
  if (!(slit_separation_s > slit_width_w)) {
    throw ConfigError("slit_separation_s must exceed slit_width_w");
  }
  if (!(std::abs(incidence_angle_A) < kPi / 2) || !(std::abs(incidence_angle_B) < kPi / 2)) {
    throw ConfigError("incidence angles must satisfy |angle| < pi/2");
  }
}

double ApparatusConfig::detector_distance(int which) const {
  check_detector_index(which);
  return which == 1 ? detector1_distance_L1 : detector2_distance_L2;
}

bool ApparatusConfig::mirror_symmetric(double tol) const {
  return std::abs(incidence_angle_A + incidence_angle_B) <= tol;
}

ApparatusConfig paper_defaults() { return ApparatusConfig{}; }

double position_to_angle(const ApparatusConfig& cfg, DetectorPosition pos) {
  const double L = cfg.detector_distance(pos.which);
  return std::atan(pos.y / L);
}

DetectorPosition angle_to_position(const ApparatusConfig& cfg, double theta, int which) {
  const double L = cfg.detector_distance(which);
  return {L * std::tan(theta), which};
}

double wave_number(double wavelength) { return 2.0 * kPi / wavelength; }

double wave_number(const ApparatusConfig& cfg) { return wave_number(cfg.wavelength); }

double fringe_period_sin(const ApparatusConfig& cfg) {
  return cfg.wavelength / cfg.slit_separation_s;
}

}  // namespace biphoton
