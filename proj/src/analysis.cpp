#include "biphoton/analysis.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>

#include "biphoton/error.hpp"

namespace biphoton::analysis {

Measurement subtract_background(const events::CountRecord& record) {
  Measurement m;
  m.value = static_cast<double>(record.coincidences_raw - record.accidentals);
  const double var = static_cast<double>(record.coincidences_raw + record.accidentals);
  if (var > 0.0) {
    m.uncertainty = std::sqrt(var);
  } else {
    m.uncertainty = 1.0;
    m.floored = true;
  }
  return m;
}

NormalizedPoint normalize_series(const std::vector<events::CountRecord>& records,
                                 double singles_reference) {
  if (records.empty()) throw ConfigError("normalize_series needs at least one record");
  NormalizedPoint p;
  p.mobile_position = records.front().mobile_position;
  p.n_acquisitions = static_cast<int>(records.size());
  const double n = static_cast<double>(records.size());

  std::vector<double> ratio;
  ratio.reserve(records.size());
  double singles_sum = 0.0;
  double ratio_var_poisson = 0.0;  // sum of Var(net)/S^2
  for (const auto& r : records) {
    if (r.singles_fixed <= 0) throw ZeroSingles("fixed-detector singles are zero");
    const auto net = subtract_background(r);
    const double s = static_cast<double>(r.singles_fixed);
    ratio.push_back(net.value / s);
    ratio_var_poisson += net.uncertainty * net.uncertainty / (s * s);
    singles_sum += s;
    p.floored = p.floored || net.floored;
    p.raw_total += r.coincidences_raw;
    p.accidentals_total += r.accidentals;
    p.singles_fixed_total += r.singles_fixed;
  }
  const double singles_mean = singles_reference > 0.0 ? singles_reference : singles_sum / n;
  double ratio_mean = 0.0;
  for (double x : ratio) ratio_mean += x;
  ratio_mean /= n;
  p.value = ratio_mean * singles_mean;

  double se = 0.0;
  if (records.size() > 1) {
    double ss = 0.0;
    for (double x : ratio) ss += (x - ratio_mean) * (x - ratio_mean);
    se = std::sqrt(ss / (n - 1.0) / n);
  }
  if (!(se > 0.0)) se = std::sqrt(ratio_var_poisson) / n;
  p.uncertainty = se * singles_mean;
  return p;
}

std::vector<NormalizedPoint> normalize_by_position(
    const std::vector<events::CountRecord>& records) {
  std::map<double, std::vector<events::CountRecord>> groups;
  double singles_sum = 0.0;
  for (const auto& r : records) {
    groups[r.mobile_position].push_back(r);
    singles_sum += static_cast<double>(r.singles_fixed);
  }
  const double reference = records.empty() ? 0.0 : singles_sum / static_cast<double>(records.size());
  std::vector<NormalizedPoint> out;
  out.reserve(groups.size());
  for (const auto& [pos, recs] : groups) out.push_back(normalize_series(recs, reference));
  return out;
}

FitModel FitModel::sqm(std::vector<double> shape, bool with_offset) {
  FitModel m;
  m.kind = ModelKind::Sqm;
  m.shape = std::move(shape);
  m.with_offset = with_offset;
  return m;
}

FitModel FitModel::constant() {
  FitModel m;
  m.kind = ModelKind::Constant;
  return m;
}

FitModel FitModel::linear() {
  FitModel m;
  m.kind = ModelKind::Linear;
  return m;
}

std::string FitModel::id() const {
  switch (kind) {
    case ModelKind::Sqm:
      return with_offset ? "sqm+offset" : "sqm";
    case ModelKind::Constant:
      return "constant";
    case ModelKind::Linear:
      return "linear";
  }
  return "unknown";
}

namespace {

// Unweighted design matrix and parameter names.
Eigen::MatrixXd design(const std::vector<NormalizedPoint>& points, const FitModel& model,
                       std::vector<std::string>& names) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd a;
  switch (model.kind) {
    case ModelKind::Sqm:
      if (model.shape.size() != points.size()) {
        throw ConfigError("SQM shape must have one value per point");
      }
      a.resize(n, model.with_offset ? 2 : 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        a(i, 0) = model.shape[static_cast<std::size_t>(i)];
        if (model.with_offset) a(i, 1) = 1.0;
      }
      names = model.with_offset ? std::vector<std::string>{"scale", "offset"}
                                : std::vector<std::string>{"scale"};
      break;
    case ModelKind::Constant:
      a = Eigen::MatrixXd::Ones(n, 1);
      names = {"level"};
      break;
    case ModelKind::Linear:
      a.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        a(i, 0) = 1.0;
        a(i, 1) = points[static_cast<std::size_t>(i)].mobile_position;
      }
      names = {"intercept", "slope"};
      break;
  }
  return a;
}

void check_sigmas(const std::vector<NormalizedPoint>& points) {
  for (const auto& p : points) {
    if (!(p.uncertainty > 0.0) || !std::isfinite(p.uncertainty)) {
      throw ConfigError("fit points need positive finite uncertainties");
    }
  }
}

}  // namespace

double chi2_p_value(double chi2, int dof) {
  if (dof < 1) throw ConfigError("dof must be >= 1");
  if (!(chi2 > 0.0)) return 1.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

double chi2_of(const std::vector<NormalizedPoint>& points, const FitModel& model,
               const std::vector<double>& parameters) {
  check_sigmas(points);
  std::vector<std::string> names;
  const Eigen::MatrixXd a = design(points, model, names);
  if (parameters.size() != static_cast<std::size_t>(a.cols())) {
    throw ConfigError("wrong number of parameters for model " + model.id());
  }
  double chi2 = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double m = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) m += a(i, j) * parameters[static_cast<std::size_t>(j)];
    const auto& p = points[static_cast<std::size_t>(i)];
    const double r = (p.value - m) / p.uncertainty;
    chi2 += r * r;
  }
  return chi2;
}

FitResult fit_model(const std::vector<NormalizedPoint>& points, const FitModel& model) {
  check_sigmas(points);
  FitResult res;
  res.model = model.id();
  Eigen::MatrixXd a = design(points, model, res.parameter_names);
  const auto n = a.rows();
  const auto m = a.cols();
  res.dof = static_cast<int>(n - m);
  if (res.dof < 1) throw ConfigError("fit needs more points than free parameters");

  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    a.row(i) /= p.uncertainty;
    b(i) = p.value / p.uncertainty;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < m) throw SingularFit("design matrix is rank deficient for model " + res.model);
  const Eigen::VectorXd x = qr.solve(b);
  const Eigen::MatrixXd cov = (a.transpose() * a).inverse();

  res.parameters.assign(x.data(), x.data() + m);
  res.parameter_errors.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    res.parameter_errors[static_cast<std::size_t>(j)] = std::sqrt(cov(j, j));
  }
  res.chi2 = (a * x - b).squaredNorm();
  res.reduced_chi2 = res.chi2 / res.dof;
  res.p_value = chi2_p_value(res.chi2, res.dof);
  return res;
}

double null_significance(double net, double uncertainty) {
  if (!(uncertainty > 0.0)) throw ConfigError("uncertainty must be > 0");
  return net / uncertainty;
}

Measurement mean_net_per_acquisition(const std::vector<events::CountRecord>& records) {
  if (records.empty()) throw ConfigError("no records");
  std::int64_t raw = 0;
  std::int64_t acc = 0;
  for (const auto& r : records) {
    raw += r.coincidences_raw;
    acc += r.accidentals;
  }
  events::CountRecord total;
  total.coincidences_raw = raw;
  total.accidentals = acc;
  auto m = subtract_background(total);
  const double n = static_cast<double>(records.size());
  m.value /= n;
  m.uncertainty /= n;
  return m;
}

std::vector<double> sqm_shape(const ApparatusConfig& cfg, const sqm::SmearingSpec& spec,
                              const std::vector<NormalizedPoint>& points, double fixed_position,
                              int fixed_detector, double mobile_aperture) {
  const auto src = events::sqm_source(cfg, spec, mobile_aperture, fixed_detector == 1 ? 2 : 1);
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const double y1 = fixed_detector == 1 ? fixed_position : p.mobile_position;
    const double y2 = fixed_detector == 1 ? p.mobile_position : fixed_position;
    out.push_back(src.rate(y1, y2));
  }
  return out;
}

}  // namespace biphoton::analysis
