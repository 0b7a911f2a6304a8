#pragma once

#include <numbers>

namespace biphoton {

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Apparatus geometry and spectral parameters. SI units, angles in radians.
///
/// Slit A sits at y = -s/2 and slit B at y = +s/2. With the default
/// incidence angles (+2 deg on A, -2 deg on B) both photons head towards the
/// symmetry axis, i.e. the slits are placed just before the condenser focus.
struct ApparatusConfig {
  double wavelength = 702e-9;
  double pump_wavelength = 351e-9;  // informational
  double slit_width_w = 10e-6;
  double slit_separation_s = 100e-6;  // center to center
  double incidence_angle_A = deg_to_rad(2.0);
  double incidence_angle_B = deg_to_rad(-2.0);
  double detector1_distance_L1 = 1.21;
  double detector2_distance_L2 = 1.50;
  double iris_diameter = 2e-3;
  double filter_fwhm = 4e-9;
  // dlambda/dtheta of the pair emission, m/rad (1 nm per mrad)
  double angular_dispersion = 1e-6;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  double slit_A_center() const { return -0.5 * slit_separation_s; }
  double slit_B_center() const { return 0.5 * slit_separation_s; }
  double detector_distance(int which) const;

  bool mirror_symmetric(double tol = 1e-15) const;
};

/// Full apparatus of the experiment (the 6 mm iris of the -5.5 cm scan
/// is selected by setting iris_diameter explicitly).
ApparatusConfig paper_defaults();

struct DetectorPosition {
  double y = 0.0;  // transverse offset from the double-slit symmetry axis, m
  int which = 1;   // detector index, 1 or 2
};

/// Exact mapping theta = atan(y / L_which).
double position_to_angle(const ApparatusConfig& cfg, DetectorPosition pos);
DetectorPosition angle_to_position(const ApparatusConfig& cfg, double theta, int which);

/// k = 2 pi / wavelength.
double wave_number(const ApparatusConfig& cfg);
double wave_number(double wavelength);

/// Period of the coincidence fringes in sin(theta_1): wavelength / s.
double fringe_period_sin(const ApparatusConfig& cfg);

}  // namespace biphoton
