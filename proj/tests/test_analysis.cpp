#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <random>

#include "biphoton/analysis.hpp"
#include "biphoton/error.hpp"
#include "doctest.h"

using namespace biphoton;
using namespace biphoton::analysis;
using events::CountRecord;

namespace {

CountRecord rec(std::int64_t raw, std::int64_t acc, std::int64_t singles = 1000,
                double pos = 0.0) {
  CountRecord r;
  r.coincidences_raw = raw;
  r.accidentals = acc;
  r.singles_fixed = singles;
  r.singles_mobile = singles;
  r.duration = 1800.0;
  r.mobile_position = pos;
  return r;
}

NormalizedPoint pt(double x, double v, double s) {
  NormalizedPoint p;
  p.mobile_position = x;
  p.value = v;
  p.uncertainty = s;
  p.n_acquisitions = 1;
  return p;
}

// Newton iterations with central-difference gradient and Hessian of chi2_of.
// The objective is quadratic, so wide steps give exact derivatives up to rounding.
std::vector<double> newton_minimum(const std::vector<NormalizedPoint>& pts, const FitModel& model,
                                   std::vector<double> x, std::vector<double> h) {
  const std::size_t m = x.size();
  auto f = [&](const std::vector<double>& p) { return chi2_of(pts, model, p); };
  for (int it = 0; it < 4; ++it) {
    std::vector<double> g(m);
    std::vector<std::vector<double>> H(m, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i) {
      auto xp = x, xm = x;
      xp[i] += h[i];
      xm[i] -= h[i];
      g[i] = (f(xp) - f(xm)) / (2.0 * h[i]);
      for (std::size_t j = 0; j < m; ++j) {
        auto pp = x, pm = x, mp = x, mm = x;
        pp[i] += h[i], pp[j] += h[j];
        pm[i] += h[i], pm[j] -= h[j];
        mp[i] -= h[i], mp[j] += h[j];
        mm[i] -= h[i], mm[j] -= h[j];
        H[i][j] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h[i] * h[j]);
      }
    }
    if (m == 1) {
      x[0] -= g[0] / H[0][0];
    } else {
      const double det = H[0][0] * H[1][1] - H[0][1] * H[1][0];
      x[0] -= (H[1][1] * g[0] - H[0][1] * g[1]) / det;
      x[1] -= (-H[1][0] * g[0] + H[0][0] * g[1]) / det;
    }
  }
  return x;
}

std::vector<NormalizedPoint> fixture(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise;
  std::uniform_real_distribution<double> u(0.5, 3.0);
  std::vector<NormalizedPoint> pts;
  for (int i = 0; i < n; ++i) {
    const double x = -0.012 + 0.004 * i;
    const double s = u(rng);
    pts.push_back(pt(x, 40.0 + 25.0 * std::cos(2.0 * kPi * x / 0.008) + s * noise(rng), s));
  }
  return pts;
}

std::vector<double> shape_of(const std::vector<NormalizedPoint>& pts) {
  std::vector<double> out;
  for (const auto& p : pts) out.push_back(1.0 + 0.6 * std::cos(2.0 * kPi * p.mobile_position / 0.008));
  return out;
}

}  // namespace

TEST_CASE("subtract_background") {
  const auto m = subtract_background(rec(100, 22));
  CHECK(m.value == 78.0);
  CHECK(m.uncertainty == doctest::Approx(11.045361017187261).epsilon(1e-14));
  CHECK_FALSE(m.floored);

  const auto zero = subtract_background(rec(0, 0));
  CHECK(zero.value == 0.0);
  CHECK(zero.uncertainty == 1.0);
  CHECK(zero.floored);

  CHECK(subtract_background(rec(200, 44)).value == 2.0 * m.value);
  CHECK(subtract_background(rec(3, 10)).value == -7.0);  // no clipping
}

TEST_CASE("subtract_background variance under Poisson counts") {
  std::mt19937_64 rng(11);
  std::poisson_distribution<std::int64_t> raw(130.0), acc(30.0);
  const int n = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = subtract_background(rec(raw(rng), acc(rng))).value;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = (sum2 - n * mean * mean) / (n - 1);
  // Var(raw - acc) = 160; sd of the sample variance ~ sqrt(2 var^2 / n)
  CHECK(std::abs(mean - 100.0) < 5.0 * std::sqrt(160.0 / n));
  CHECK(std::abs(var - 160.0) < 5.0 * std::sqrt(2.0 * 160.0 * 160.0 / n));
}

TEST_CASE("null_significance") {
  CHECK(null_significance(78.0, 10.0) == doctest::Approx(7.8));
  CHECK(null_significance(41.0, 14.0) == doctest::Approx(2.93).epsilon(1e-3));
  CHECK(null_significance(0.0, 10.0) == 0.0);
  CHECK_THROWS_AS(null_significance(1.0, 0.0), ConfigError);
}

TEST_CASE("normalize_series") {
  SUBCASE("single record gives its net count") {
    const auto p = normalize_series({rec(130, 30, 4321, 0.004)});
    CHECK(p.value == doctest::Approx(100.0).epsilon(1e-15));
    CHECK(p.uncertainty == doctest::Approx(std::sqrt(160.0)));
    CHECK(p.mobile_position == 0.004);
    CHECK(p.raw_total == 130);
    CHECK(p.accidentals_total == 30);
  }

  SUBCASE("ratio estimator") {
    const std::vector<CountRecord> rs{rec(110, 10, 1000), rec(60, 10, 500), rec(80, 20, 800)};
    const double r = (100.0 / 1000 + 50.0 / 500 + 60.0 / 800) / 3.0;
    const double s = (1000.0 + 500 + 800) / 3.0;
    const auto p = normalize_series(rs);
    CHECK(p.value == doctest::Approx(r * s).epsilon(1e-14));
    double ss = 0.0;
    for (double x : {0.1, 0.1, 0.075}) ss += (x - r) * (x - r);
    CHECK(p.uncertainty == doctest::Approx(std::sqrt(ss / 2.0 / 3.0) * s).epsilon(1e-12));
    CHECK(p.n_acquisitions == 3);
    CHECK(p.singles_fixed_total == 2300);
  }

  SUBCASE("identical ratios fall back to Poisson propagation") {
    const auto p = normalize_series({rec(110, 10, 1000), rec(110, 10, 1000)});
    CHECK(p.value == doctest::Approx(100.0));
    CHECK(p.uncertainty == doctest::Approx(std::sqrt(2.0 * 120.0) / 2.0));
  }

  SUBCASE("common per-acquisition factor cancels") {
    const std::vector<CountRecord> a{rec(110, 10, 1000), rec(60, 10, 500), rec(80, 20, 800)};
    std::vector<CountRecord> b = a;
    for (auto& r : b) {
      r.coincidences_raw *= 3;
      r.accidentals *= 3;
      r.singles_fixed *= 3;
    }
    CHECK(normalize_series(b).value == doctest::Approx(3.0 * normalize_series(a).value));
    // ratio unchanged: same value against a common reference
    CHECK(normalize_series(b, 700.0).value == doctest::Approx(normalize_series(a, 700.0).value));
  }

  CHECK_THROWS_AS(normalize_series({rec(10, 1, 0)}), ZeroSingles);
  CHECK_THROWS_AS(normalize_series({}), ConfigError);
  CHECK(normalize_series({rec(0, 0)}).floored);
}

TEST_CASE("normalize_by_position groups and sorts") {
  const std::vector<CountRecord> rs{rec(20, 0, 1000, 0.004), rec(10, 0, 1000, -0.004),
                                    rec(30, 0, 1000, 0.004), rec(12, 0, 1000, -0.004)};
  const auto pts = normalize_by_position(rs);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].mobile_position == -0.004);
  CHECK(pts[0].value == doctest::Approx(11.0));
  CHECK(pts[1].value == doctest::Approx(25.0));
  CHECK(pts[1].n_acquisitions == 2);
}

TEST_CASE("drift cancels across positions") {
  ApparatusConfig cfg;
  events::RunSpec run;
  run.duration = 3600.0;
  run.n_acquisitions = 10;
  run.mobile_positions = {-0.01, -0.005, 0.0, 0.005, 0.01, 0.015};
  run.singles_rate_fixed = 1e4;
  run.singles_rate_mobile = 1e4;
  run.rate_scale = 200.0 / (0.09 * 3600.0);  // 200 true per hour undrifted
  run.drift = {events::DriftModel::Kind::Linear, 0.1};
  const events::PatternSource flat{"flat", [](double, double) { return 1.0; }};
  const auto means = events::apply_drift(events::expected_counts(cfg, run, flat), run.drift,
                                         run.tac_window);
  double f_mean = 0.0;
  for (const auto& m : means) f_mean += m.true_coincidences / 200.0;
  f_mean /= static_cast<double>(means.size());

  int accepted = 0, raw_rejected = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto recs = events::realize(means, static_cast<std::uint64_t>(seed));
    const auto pts = normalize_by_position(recs);
    REQUIRE(pts.size() == 6);
    const auto fit = fit_model(pts, FitModel::constant());
    if (fit.p_value > 0.05) ++accepted;
    // the flat-truth level is the undrifted rate times the run-mean drift factor
    CHECK(std::abs(fit.parameters[0] - 200.0 * f_mean) < 5.0 * fit.parameter_errors[0]);

    // without the ratio the 25% decay over the run is plain
    std::vector<NormalizedPoint> raw;
    for (double x : run.mobile_positions) {
      std::vector<CountRecord> group;
      for (const auto& r : recs) {
        if (r.mobile_position == x) group.push_back(r);
      }
      auto p = normalize_series(group);
      const auto m = mean_net_per_acquisition(group);
      p.value = m.value;
      p.uncertainty = m.uncertainty;
      raw.push_back(p);
    }
    if (fit_model(raw, FitModel::constant()).p_value < 0.05) ++raw_rejected;
  }
  CHECK(accepted >= 88);
  CHECK(raw_rejected >= 90);
}

TEST_CASE("coverage of a drifted 10-acquisition series") {
  ApparatusConfig cfg;
  events::RunSpec run;
  run.duration = 3600.0;
  run.n_acquisitions = 10;
  run.rate_scale = 100.0 / (0.09 * 3600.0);
  run.drift = {events::DriftModel::Kind::Linear, 0.1};
  const events::PatternSource flat{"flat", [](double, double) { return 1.0; }};
  const auto means = events::apply_drift(events::expected_counts(cfg, run, flat), run.drift,
                                         run.tac_window);
  double truth = 0.0;
  for (const auto& m : means) truth += m.true_coincidences;
  truth /= static_cast<double>(means.size());

  const int seeds = 2000;
  int covered = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto p = normalize_series(events::realize(means, static_cast<std::uint64_t>(seed)));
    if (std::abs(p.value - truth) < 2.0 * p.uncertainty) ++covered;
  }
  // a 2 SE band from 10 samples covers P(|t_9| < 2)
  const boost::math::students_t t9(9.0);
  const double expect = 1.0 - 2.0 * boost::math::cdf(boost::math::complement(t9, 2.0));
  const double frac = static_cast<double>(covered) / seeds;
  CHECK(std::abs(frac - expect) < 4.0 * std::sqrt(expect * (1.0 - expect) / seeds));
}

TEST_CASE("weighted least squares matches closed forms and Newton") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto pts = fixture(seed, 6);

    // one-parameter scale: s = sum(d h / sigma^2) / sum(h^2 / sigma^2)
    const auto shape = shape_of(pts);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double w = 1.0 / (pts[i].uncertainty * pts[i].uncertainty);
      num += w * pts[i].value * shape[i];
      den += w * shape[i] * shape[i];
    }
    const auto sqm = fit_model(pts, FitModel::sqm(shape));
    CHECK(sqm.parameters[0] == doctest::Approx(num / den).epsilon(1e-12));
    CHECK(sqm.parameter_errors[0] == doctest::Approx(1.0 / std::sqrt(den)).epsilon(1e-12));
    CHECK(sqm.dof == 5);
    const auto s_newton = newton_minimum(pts, FitModel::sqm(shape), {1.0}, {10.0});
    CHECK(sqm.parameters[0] == doctest::Approx(s_newton[0]).epsilon(1e-10));
    CHECK(sqm.chi2 == doctest::Approx(chi2_of(pts, FitModel::sqm(shape), sqm.parameters)));

    // line: 2x2 normal equations
    double S = 0, Sx = 0, Sxx = 0, Sy = 0, Sxy = 0;
    for (const auto& p : pts) {
      const double w = 1.0 / (p.uncertainty * p.uncertainty);
      S += w;
      Sx += w * p.mobile_position;
      Sxx += w * p.mobile_position * p.mobile_position;
      Sy += w * p.value;
      Sxy += w * p.mobile_position * p.value;
    }
    const double D = S * Sxx - Sx * Sx;
    const auto lin = fit_model(pts, FitModel::linear());
    CHECK(lin.parameters[0] == doctest::Approx((Sxx * Sy - Sx * Sxy) / D).epsilon(1e-10));
    CHECK(lin.parameters[1] == doctest::Approx((S * Sxy - Sx * Sy) / D).epsilon(1e-10));
    CHECK(lin.parameter_errors[1] == doctest::Approx(std::sqrt(S / D)).epsilon(1e-10));
    const auto l_newton = newton_minimum(pts, FitModel::linear(), {0.0, 0.0}, {10.0, 1000.0});
    CHECK(lin.parameters[0] == doctest::Approx(l_newton[0]).epsilon(1e-10));
    CHECK(lin.parameters[1] == doctest::Approx(l_newton[1]).epsilon(1e-10));
    CHECK(lin.dof == 4);

    const auto c = fit_model(pts, FitModel::constant());
    CHECK(c.parameters[0] == doctest::Approx(Sy / S).epsilon(1e-12));
    CHECK(c.p_value == doctest::Approx(chi2_p_value(c.chi2, 5)));

    // nested models: an extra free parameter never raises chi2
    CHECK(lin.chi2 <= c.chi2 + 1e-9);
    CHECK(fit_model(pts, FitModel::sqm(shape, true)).chi2 <= sqm.chi2 + 1e-9);
    CHECK(fit_model(pts, FitModel::sqm(shape, true)).chi2 <= c.chi2 + 1e-9);
  }
}

TEST_CASE("chi2 of the scale is quadratic") {
  const auto pts = fixture(3, 6);
  const auto model = FitModel::sqm(shape_of(pts));
  const auto fit = fit_model(pts, model);
  const double s0 = fit.parameters[0];
  const double e = fit.parameter_errors[0];
  for (double k : {-3.0, -1.0, 0.5, 2.0}) {
    CHECK(chi2_of(pts, model, {s0 + k * e}) == doctest::Approx(fit.chi2 + k * k).epsilon(1e-10));
  }
}

TEST_CASE("reduced chi2 calibrates to 1") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> noise;
  const int trials = 4000;
  double sum = 0.0;
  int rejected = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<NormalizedPoint> pts;
    for (int i = 0; i < 6; ++i) {
      const double x = -0.012 + 0.004 * i;
      pts.push_back(pt(x, 3.0 + 40.0 * x + noise(rng), 1.0));
    }
    const auto fit = fit_model(pts, FitModel::linear());
    sum += fit.reduced_chi2;
    if (fit.p_value < 0.05) ++rejected;
  }
  // Var(chi2_4 / 4) = 0.5
  CHECK(std::abs(sum / trials - 1.0) < 5.0 * std::sqrt(0.5 / trials));
  CHECK(std::abs(rejected / double(trials) - 0.05) < 5.0 * std::sqrt(0.05 * 0.95 / trials));
}

TEST_CASE("p-values") {
  CHECK(chi2_p_value(0.0, 3) == 1.0);
  CHECK(chi2_p_value(11.0704976935, 5) == doctest::Approx(0.05).epsilon(1e-8));
  CHECK(chi2_p_value(2.0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(chi2_p_value(1.0, 0), ConfigError);
}

TEST_CASE("fit errors") {
  const std::vector<NormalizedPoint> same_x{pt(0.0, 1.0, 1.0), pt(0.0, 2.0, 1.0),
                                            pt(0.0, 3.0, 1.0)};
  CHECK_THROWS_AS(fit_model(same_x, FitModel::linear()), SingularFit);
  CHECK_THROWS_AS(fit_model(same_x, FitModel::sqm({0.0, 0.0, 0.0})), SingularFit);
  CHECK_THROWS_AS(fit_model(same_x, FitModel::sqm({1.0, 1.0, 1.0}, true)), SingularFit);
  CHECK_THROWS_AS(fit_model({pt(0.0, 1.0, 1.0), pt(1.0, 1.0, 1.0)}, FitModel::linear()),
                  ConfigError);
  CHECK_THROWS_AS(fit_model({pt(0.0, 1.0, 0.0), pt(1.0, 1.0, 1.0)}, FitModel::constant()),
                  ConfigError);
  CHECK_THROWS_AS(fit_model(same_x, FitModel::sqm({1.0})), ConfigError);
  CHECK_THROWS_AS(chi2_of(same_x, FitModel::linear(), {1.0}), ConfigError);
  CHECK(FitModel::sqm({}, true).id() == "sqm+offset");
  CHECK(FitModel::linear().id() == "linear");
}

TEST_CASE("mean_net_per_acquisition") {
  std::vector<CountRecord> rs(35, rec(1800 + 78, 1800));
  const auto m = mean_net_per_acquisition(rs);
  CHECK(m.value == doctest::Approx(78.0));
  CHECK(m.uncertainty == doctest::Approx(std::sqrt(35.0 * 3678.0) / 35.0));
}

TEST_CASE("sqm_shape evaluates the aperture-averaged pattern") {
  const auto cfg = paper_defaults();
  const auto spec = sqm::SmearingSpec::from_config(cfg);
  const std::vector<NormalizedPoint> pts{pt(-0.004, 0, 1), pt(0.0, 0, 1)};
  const auto shape = sqm_shape(cfg, spec, pts, -0.01, 2, cfg.iris_diameter);
  const auto src = events::sqm_source(cfg, spec, cfg.iris_diameter, 1);
  CHECK(shape[0] == src.rate(-0.004, -0.01));
  CHECK(shape[1] == src.rate(0.0, -0.01));
  CHECK(shape[1] > shape[0]);
}
