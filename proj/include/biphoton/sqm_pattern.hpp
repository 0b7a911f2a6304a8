#pragma once

#include <optional>
#include <string>
#include <vector>

#include "biphoton/geometry.hpp"

namespace biphoton::sqm {

/// The four diffraction factors and the interference phase of the two-photon
/// amplitude at one pair of detection angles.
struct AmplitudeTerm {
  double g1A = 0.0;  // photon from slit A reaching detector 1
  double g2B = 0.0;
  double g2A = 0.0;
  double g1B = 0.0;
  double phase_arg = 0.0;  // k s (sin theta1 - sin theta2)

  double direct() const { return g1A * g1A * g2B * g2B; }
  double exchanged() const { return g2A * g2A * g1B * g1B; }
  double interference() const;
  double coincidence() const { return direct() + exchanged() + interference(); }
};

/// One spectral component of the pair: per-photon wavenumber and incidence angle.
struct PairComponent {
  double k_A = 0.0;
  double k_B = 0.0;
  double incidence_A = 0.0;
  double incidence_B = 0.0;
};

enum class DispersionCoupling {
  Anticorrelated,  // photon B shifts opposite to photon A (energy conservation)
  Correlated,
};

struct SmearingSpec {
  double filter_fwhm = 4e-9;
  double angular_dispersion = 1e-6;  // m/rad
  int quadrature_points = 21;
  DispersionCoupling coupling = DispersionCoupling::Anticorrelated;

  void validate() const;
  static SmearingSpec from_config(const ApparatusConfig& cfg, int quadrature_points = 21);
  static SmearingSpec none() { return {0.0, 1e-6, 1, DispersionCoupling::Anticorrelated}; }
};

/// sin(x)/x with x = (k w / 2)(sin theta - sin theta_inc).
double sinc_envelope(double k, double w, double theta, double theta_inc);

PairComponent central_component(const ApparatusConfig& cfg);

AmplitudeTerm amplitude_terms(const ApparatusConfig& cfg, const PairComponent& pair,
                              double theta1, double theta2);
AmplitudeTerm amplitude_terms(const ApparatusConfig& cfg, double theta1, double theta2);

/// Fourth-order coincidence rate C(theta1, theta2), arbitrary units.
double coincidence_value(const ApparatusConfig& cfg, double theta1, double theta2);

/// Coincidences of distinguishable photons (no interference term).
double incoherent_value(const ApparatusConfig& cfg, double theta1, double theta2);

/// Coincidence pattern averaged over the Gaussian transmission of the
/// interference filter, each wavelength also tilting the incidence angles.
double smeared_coincidence(const ApparatusConfig& cfg, const SmearingSpec& spec, double theta1,
                           double theta2);

/// Wavelength offsets and weights of the filter quadrature (weights sum to 1).
struct QuadratureRule {
  std::vector<double> offsets;
  std::vector<double> weights;
};
QuadratureRule filter_quadrature(const SmearingSpec& spec);

/// Gauss-Hermite nodes/weights for the weight exp(-x^2) (weights sum to sqrt(pi)).
QuadratureRule gauss_hermite(int n);

/// Coincidence at the given detector positions, averaged over the circular lens
/// aperture in front of each detector (diameter 0 means a point detector).
double aperture_averaged_coincidence(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                     double y1, double y2, double aperture1,
                                     double aperture2 = 0.0);

enum class AxisKind { Angle, Position };

/// Inclusive arithmetic range. start == stop yields one sample.
struct AxisRange {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  std::vector<double> samples() const;
};

struct PatternPoint {
  double axis1 = 0.0;
  double axis2 = 0.0;
  double value = 0.0;
};

struct CoincidencePattern {
  AxisKind axis_kind = AxisKind::Angle;
  std::vector<PatternPoint> grid;  // axis1 major, both ascending
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  ApparatusConfig config;
  SmearingSpec smearing;
  // value = normalization * C
  double normalization = 1.0;
  bool normalized_to_max = true;
};

/// Dense evaluation over axis1 x axis2. Without a scale the maximum is set to 1.
CoincidencePattern pattern_grid(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                const AxisRange& axis1, const AxisRange& axis2,
                                AxisKind kind = AxisKind::Angle,
                                std::optional<double> scale = std::nullopt);

struct MarginalPoint {
  double theta1 = 0.0;
  double value = 0.0;  // mean of C over the theta2 range
};

/// Mean of C over theta2 in [theta2_lo, theta2_hi] for each theta1 (composite
/// Simpson with `intervals` panels). A zero-width range returns C itself.
std::vector<MarginalPoint> singles_marginal(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                            const AxisRange& theta1, double theta2_lo,
                                            double theta2_hi, int intervals = 400);

/// Fraction of the coincidence rate, at fixed theta2, that lands with detector 1
/// in the same semiplane as detector 2. Integration over theta1 in [-limit, limit].
double same_semiplane_fraction(const ApparatusConfig& cfg, const SmearingSpec& spec,
                               double theta2, double theta1_limit = 0.2, int intervals = 4000);

/// Probability that both photons land on the same side, from the full C(theta1,theta2)
/// over the square [-limit, limit]^2.
double same_quadrant_probability(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                 double limit = 0.2, int intervals = 400);

const char* to_string(AxisKind kind);
const char* to_string(DispersionCoupling coupling);

}  // namespace biphoton::sqm
