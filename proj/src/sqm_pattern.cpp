#include "biphoton/sqm_pattern.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "biphoton/error.hpp"
#include "parallel.hpp"

namespace biphoton::sqm {

namespace {

constexpr double kFwhmToSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

// Composite Simpson over [a, b] with an even number of panels.
template <typename F>
double simpson(F&& f, double a, double b, int panels) {
  if (panels < 2) panels = 2;
  if (panels % 2 != 0) ++panels;
  const double h = (b - a) / panels;
  double sum = f(a) + f(b);
  for (int i = 1; i < panels; ++i) {
    sum += (i % 2 == 1 ? 4.0 : 2.0) * f(a + i * h);
  }
  return sum * h / 3.0;
}

// Nodes and weights of int_{-1}^{1} sqrt(1 - x^2) f(x) dx (Chebyshev, 2nd kind),
// rescaled so the weights sum to 1.
struct ChordRule {
  std::vector<double> x;
  std::vector<double> w;
};

const ChordRule& chord_rule() {
  static const ChordRule rule = [] {
    constexpr int n = 24;
    ChordRule r;
    double total = 0.0;
    for (int i = 1; i <= n; ++i) {
      const double a = i * kPi / (n + 1);
      r.x.push_back(std::cos(a));
      const double s = std::sin(a);
      r.w.push_back(s * s);
      total += s * s;
    }
    for (double& w : r.w) w /= total;
    return r;
  }();
  return rule;
}

}  // namespace

double AmplitudeTerm::interference() const {
  return 2.0 * g1A * g2B * g2A * g1B * std::cos(phase_arg);
}

void SmearingSpec::validate() const {
  if (quadrature_points < 1) {
    throw ConfigError("quadrature_points must be >= 1");
  }
  if (!(filter_fwhm >= 0.0) || !std::isfinite(filter_fwhm)) {
    throw ConfigError("filter_fwhm must be non-negative");
  }
  if (!(angular_dispersion > 0.0)) {
    throw ConfigError("angular_dispersion must be positive");
  }
}

SmearingSpec SmearingSpec::from_config(const ApparatusConfig& cfg, int quadrature_points) {
  return {cfg.filter_fwhm, cfg.angular_dispersion, quadrature_points,
          DispersionCoupling::Anticorrelated};
}

double sinc_envelope(double k, double w, double theta, double theta_inc) {
  const double x = 0.5 * k * w * (std::sin(theta) - std::sin(theta_inc));
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

PairComponent central_component(const ApparatusConfig& cfg) {
  const double k = wave_number(cfg);
  return {k, k, cfg.incidence_angle_A, cfg.incidence_angle_B};
}

AmplitudeTerm amplitude_terms(const ApparatusConfig& cfg, const PairComponent& pair,
                              double theta1, double theta2) {
  const double w = cfg.slit_width_w;
  AmplitudeTerm t;
  t.g1A = sinc_envelope(pair.k_A, w, theta1, pair.incidence_A);
  t.g2B = sinc_envelope(pair.k_B, w, theta2, pair.incidence_B);
  t.g2A = sinc_envelope(pair.k_A, w, theta2, pair.incidence_A);
  t.g1B = sinc_envelope(pair.k_B, w, theta1, pair.incidence_B);
  const double k_mean = 0.5 * (pair.k_A + pair.k_B);
  t.phase_arg = k_mean * cfg.slit_separation_s * (std::sin(theta1) - std::sin(theta2));
  return t;
}

AmplitudeTerm amplitude_terms(const ApparatusConfig& cfg, double theta1, double theta2) {
  return amplitude_terms(cfg, central_component(cfg), theta1, theta2);
}

double coincidence_value(const ApparatusConfig& cfg, double theta1, double theta2) {
  return amplitude_terms(cfg, theta1, theta2).coincidence();
}

double incoherent_value(const ApparatusConfig& cfg, double theta1, double theta2) {
  const AmplitudeTerm t = amplitude_terms(cfg, theta1, theta2);
  return t.direct() + t.exchanged();
}

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw ConfigError("Gauss-Hermite order must be >= 1");
  QuadratureRule rule;
  if (n == 1) {
    rule.offsets = {0.0};
    rule.weights = {std::sqrt(kPi)};
    return rule;
  }
  // Golub-Welsch: eigen-decomposition of the Jacobi matrix of the Hermite recurrence.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(n - 1);
  for (int i = 1; i < n; ++i) off(i - 1) = std::sqrt(0.5 * i);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("Gauss-Hermite eigen-decomposition failed");
  }
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    w[i] = std::sqrt(kPi) * v0 * v0;
  }
  // Enforce the exact mirror symmetry of the rule (centre node exactly 0 for odd n).
  rule.offsets.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    const int j = n - 1 - i;
    rule.offsets[i] = 0.5 * (x[i] - x[j]);
    rule.weights[i] = 0.5 * (w[i] + w[j]);
  }
  return rule;
}

QuadratureRule filter_quadrature(const SmearingSpec& spec) {
  spec.validate();
  if (spec.filter_fwhm == 0.0 || spec.quadrature_points == 1) {
    return {{0.0}, {1.0}};
  }
  const double sigma = spec.filter_fwhm / kFwhmToSigma;
  QuadratureRule rule = gauss_hermite(spec.quadrature_points);
  for (double& x : rule.offsets) x *= std::sqrt(2.0) * sigma;
  for (double& w : rule.weights) w /= std::sqrt(kPi);
  return rule;
}

namespace {

PairComponent shifted_component(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                double dlambda) {
  const double lambda0 = cfg.wavelength;
  const double lambda_A = lambda0 + dlambda;
  const double dtheta = dlambda / spec.angular_dispersion;
  PairComponent c;
  c.k_A = wave_number(lambda_A);
  if (spec.coupling == DispersionCoupling::Anticorrelated) {
    // omega_A + omega_B = omega_pump with a degenerate central pair
    const double lambda_B = 1.0 / (2.0 / lambda0 - 1.0 / lambda_A);
    c.k_B = wave_number(lambda_B);
    c.incidence_A = cfg.incidence_angle_A + dtheta;
    c.incidence_B = cfg.incidence_angle_B - dtheta;
  } else {
    c.k_B = c.k_A;
    c.incidence_A = cfg.incidence_angle_A + dtheta;
    c.incidence_B = cfg.incidence_angle_B + dtheta;
  }
  return c;
}

double smeared_with_rule(const ApparatusConfig& cfg, const SmearingSpec& spec,
                         const QuadratureRule& rule, double theta1, double theta2) {
  if (rule.offsets.size() == 1 && rule.offsets[0] == 0.0) {
    return coincidence_value(cfg, theta1, theta2);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.offsets.size(); ++i) {
    const PairComponent c = shifted_component(cfg, spec, rule.offsets[i]);
    acc += rule.weights[i] * amplitude_terms(cfg, c, theta1, theta2).coincidence();
  }
  return acc;
}

}  // namespace

double smeared_coincidence(const ApparatusConfig& cfg, const SmearingSpec& spec, double theta1,
                           double theta2) {
  const QuadratureRule rule = filter_quadrature(spec);
  return smeared_with_rule(cfg, spec, rule, theta1, theta2);
}

double aperture_averaged_coincidence(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                     double y1, double y2, double aperture1, double aperture2) {
  if (aperture1 < 0.0 || aperture2 < 0.0) throw ConfigError("aperture must be >= 0");
  const QuadratureRule rule = filter_quadrature(spec);
  const ChordRule& chord = chord_rule();
  const double L1 = cfg.detector1_distance_L1;
  const double L2 = cfg.detector2_distance_L2;
  static const std::vector<double> point_x{0.0};
  static const std::vector<double> point_w{1.0};
  const auto& x1 = aperture1 > 0.0 ? chord.x : point_x;
  const auto& w1 = aperture1 > 0.0 ? chord.w : point_w;
  const auto& x2 = aperture2 > 0.0 ? chord.x : point_x;
  const auto& w2 = aperture2 > 0.0 ? chord.w : point_w;
  double acc = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    const double t1 = std::atan((y1 + 0.5 * aperture1 * x1[i]) / L1);
    for (std::size_t j = 0; j < x2.size(); ++j) {
      const double t2 = std::atan((y2 + 0.5 * aperture2 * x2[j]) / L2);
      acc += w1[i] * w2[j] * smeared_with_rule(cfg, spec, rule, t1, t2);
    }
  }
  return acc;
}

std::vector<double> AxisRange::samples() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("axis step must be > 0");
  if (stop < start) throw ConfigError("axis range is empty (stop < start)");
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = start + static_cast<double>(i) * step;
  return out;
}

CoincidencePattern pattern_grid(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                const AxisRange& axis1, const AxisRange& axis2, AxisKind kind,
                                std::optional<double> scale) {
  cfg.validate();
  const QuadratureRule rule = filter_quadrature(spec);
  const std::vector<double> a1 = axis1.samples();
  const std::vector<double> a2 = axis2.samples();

  CoincidencePattern pattern;
  pattern.axis_kind = kind;
  pattern.n1 = a1.size();
  pattern.n2 = a2.size();
  pattern.config = cfg;
  pattern.smearing = spec;
  pattern.grid.resize(a1.size() * a2.size());

  detail::parallel_for(a1.size(), [&](std::size_t i) {
    const double t1 = kind == AxisKind::Angle ? a1[i] : position_to_angle(cfg, {a1[i], 1});
    for (std::size_t j = 0; j < a2.size(); ++j) {
      const double t2 = kind == AxisKind::Angle ? a2[j] : position_to_angle(cfg, {a2[j], 2});
      pattern.grid[i * a2.size() + j] = {a1[i], a2[j], smeared_with_rule(cfg, spec, rule, t1, t2)};
    }
  });

  if (scale) {
    for (auto& p : pattern.grid) p.value *= *scale;
    pattern.normalization = *scale;
    pattern.normalized_to_max = false;
  } else {
    double peak = 0.0;
    for (const auto& p : pattern.grid) peak = std::max(peak, p.value);
    if (peak > 0.0) {
      // divide rather than multiply so the maximum is exactly 1
      for (auto& p : pattern.grid) p.value /= peak;
      pattern.normalization = 1.0 / peak;
    }
  }
  return pattern;
}

std::vector<MarginalPoint> singles_marginal(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                            const AxisRange& theta1, double theta2_lo,
                                            double theta2_hi, int intervals) {
  if (theta2_hi < theta2_lo) throw ConfigError("empty theta2 integration range");
  const QuadratureRule rule = filter_quadrature(spec);
  const std::vector<double> t1 = theta1.samples();
  std::vector<MarginalPoint> out(t1.size());
  detail::parallel_for(t1.size(), [&](std::size_t i) {
    const auto f = [&](double t2) { return smeared_with_rule(cfg, spec, rule, t1[i], t2); };
    double value;
    if (theta2_hi == theta2_lo) {
      value = f(theta2_lo);
    } else {
      value = simpson(f, theta2_lo, theta2_hi, intervals) / (theta2_hi - theta2_lo);
    }
    out[i] = {t1[i], value};
  });
  return out;
}

double same_semiplane_fraction(const ApparatusConfig& cfg, const SmearingSpec& spec,
                               double theta2, double theta1_limit, int intervals) {
  if (theta2 == 0.0) throw ConfigError("detector 2 on the symmetry axis has no semiplane");
  if (!(theta1_limit > 0.0)) throw ConfigError("theta1_limit must be > 0");
  const QuadratureRule rule = filter_quadrature(spec);
  const auto f = [&](double t1) { return smeared_with_rule(cfg, spec, rule, t1, theta2); };
  const double negative = simpson(f, -theta1_limit, 0.0, intervals);
  const double positive = simpson(f, 0.0, theta1_limit, intervals);
  const double same = theta2 < 0.0 ? negative : positive;
  return same / (negative + positive);
}

double same_quadrant_probability(const ApparatusConfig& cfg, const SmearingSpec& spec,
                                 double limit, int intervals) {
  if (!(limit > 0.0)) throw ConfigError("limit must be > 0");
  const QuadratureRule rule = filter_quadrature(spec);
  // Per-quadrant integrals: inner over theta2, outer over theta1.
  const auto quadrant = [&](double a1, double b1, double a2, double b2) {
    return simpson(
        [&](double t1) {
          return simpson([&](double t2) { return smeared_with_rule(cfg, spec, rule, t1, t2); },
                         a2, b2, intervals);
        },
        a1, b1, intervals);
  };
  const double nn = quadrant(-limit, 0.0, -limit, 0.0);
  const double pp = quadrant(0.0, limit, 0.0, limit);
  const double np = quadrant(-limit, 0.0, 0.0, limit);
  const double pn = quadrant(0.0, limit, -limit, 0.0);
  return (nn + pp) / (nn + pp + np + pn);
}

const char* to_string(AxisKind kind) { return kind == AxisKind::Angle ? "angle" : "position"; }

const char* to_string(DispersionCoupling coupling) {
  return coupling == DispersionCoupling::Anticorrelated ? "anticorrelated" : "correlated";
}

}  // namespace biphoton::sqm
