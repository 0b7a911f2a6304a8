#include "biphoton/dbb_dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "biphoton/error.hpp"
#include "biphoton/random.hpp"
#include "parallel.hpp"

namespace biphoton::dbb {

namespace {

using cplx = std::complex<double>;

// Free (or rigidly translating) 1D Gaussian packet with hbar = 1, mass `mass`,
// |phi|^2 rms width `sigma`, initial centre `x0` and momentum `p`, at time z.
struct PacketAt {
  double x0 = 0.0;
  double mu = 0.0;  // current centre
  double p = 0.0;
  cplx c;           // 1 / (4 sigma^2 (1 + i tau))
  cplx log_prefactor;  // -1/2 ln(1 + i tau) - i p^2 z / (2 m)

  // Gaussian exponent without the prefactor; its real part is <= 0.
  cplx exponent(double x) const {
    const double d = x - mu;
    return -c * (d * d) + cplx(0.0, p * (x - x0));
  }
  cplx dlog(double x) const { return -2.0 * c * (x - mu) + cplx(0.0, p); }
};

PacketAt packet_at(double x0, double sigma, double p, double mass, bool frozen, double z) {
  PacketAt pk;
  pk.x0 = x0;
  pk.p = p;
  pk.mu = x0 + p * z / mass;
  const double phase = -p * p * z / (2.0 * mass);
  if (frozen) {
    pk.c = cplx(1.0 / (4.0 * sigma * sigma), 0.0);
    pk.log_prefactor = cplx(0.0, phase);
  } else {
    const double tau = z / (2.0 * mass * sigma * sigma);
    const cplx q(1.0, tau);
    pk.c = 1.0 / (4.0 * sigma * sigma * q);
    pk.log_prefactor = -0.5 * std::log(q) + cplx(0.0, phase);
  }
  return pk;
}

// Both factors of Psi = G(Y) [F(r) + F(-r)] at one propagation distance.
struct WaveAt {
  PacketAt cm;   // G, coordinate Y
  PacketAt rel;  // F, coordinate r
  bool symmetrized = true;
};

WaveAt wave_at(const TwoPhotonWave& w, double z) {
  const double Yc = 0.5 * (w.slit_center_A + w.slit_center_B);
  const double rc = w.slit_center_A - w.slit_center_B;
  const double P = w.kick_A + w.kick_B;
  const double p = 0.5 * (w.kick_A - w.kick_B);
  WaveAt at;
  at.cm = packet_at(Yc, w.waist / std::sqrt(2.0), P, 2.0 * w.k,
                    w.cm_mode == CenterOfMassMode::Anticorrelated, z);
  at.rel = packet_at(rc, w.waist * std::sqrt(2.0), p, 0.5 * w.k, false, z);
  at.symmetrized = w.symmetrized;
  return at;
}

// Relative-coordinate factor H(r) = F(r) + F(-r), scaled by exp(-m) to avoid underflow.
struct RelativeFactor {
  double log_scale = 0.0;  // m
  cplx a;                  // F(r) e^{-m}
  cplx b;                  // F(-r) e^{-m}
  cplx dlog;               // d ln H / dr
};

RelativeFactor relative_factor(const WaveAt& at, double r) {
  RelativeFactor f;
  const cplx ea = at.rel.exponent(r);
  if (!at.symmetrized) {
    f.log_scale = ea.real();
    f.a = std::polar(1.0, ea.imag());
    f.b = 0.0;
    f.dlog = at.rel.dlog(r);
    return f;
  }
  const cplx eb = at.rel.exponent(-r);
  f.log_scale = std::max(ea.real(), eb.real());
  f.a = std::exp(ea - f.log_scale);
  f.b = std::exp(eb - f.log_scale);
  const cplx num = f.a * at.rel.dlog(r) - f.b * at.rel.dlog(-r);
  f.dlog = num / (f.a + f.b);
  return f;
}

double relative_log_density_at(const WaveAt& at, double Y, const RelativeFactor& f) {
  const double sum2 = std::norm(f.a + f.b);
  if (sum2 == 0.0) return -std::numeric_limits<double>::infinity();
  const double peak = at.symmetrized ? std::log(4.0) : 0.0;
  return 2.0 * at.cm.exponent(Y).real() + 2.0 * f.log_scale + std::log(sum2) - peak;
}

std::optional<Velocity> velocity_at(const WaveAt& at, double k, double y1, double y2,
                                    double log_floor) {
  const double Y = 0.5 * (y1 + y2);
  const double r = y1 - y2;
  const RelativeFactor f = relative_factor(at, r);
  const double rel = relative_log_density_at(at, Y, f);
  if (!(rel >= log_floor)) return std::nullopt;
  const double gY = 0.5 * at.cm.dlog(Y).imag();
  const double hr = f.dlog.imag();
  return Velocity{(gY + hr) / k, (gY - hr) / k};
}

Semiplane side(double y, double v) {
  if (y > 0.0) return Semiplane::Right;
  if (y < 0.0) return Semiplane::Left;
  return v < 0.0 ? Semiplane::Left : Semiplane::Right;
}

}  // namespace

void TwoPhotonWave::validate() const {
  if (!(waist > 0.0)) throw ConfigError("waist must be > 0");
  if (!(k > 0.0)) throw ConfigError("wavenumber must be > 0");
  if (!std::isfinite(slit_center_A) || !std::isfinite(slit_center_B) ||
      !std::isfinite(kick_A) || !std::isfinite(kick_B)) {
    throw ConfigError("wave parameters must be finite");
  }
}

TwoPhotonWave TwoPhotonWave::from_config(const ApparatusConfig& cfg, std::optional<double> waist,
                                         CenterOfMassMode mode) {
  cfg.validate();
  TwoPhotonWave w;
  w.k = wave_number(cfg);
  w.slit_center_A = cfg.slit_A_center();
  w.slit_center_B = cfg.slit_B_center();
  w.waist = waist.value_or(0.5 * cfg.slit_width_w);
  w.kick_A = w.k * std::sin(cfg.incidence_angle_A);
  w.kick_B = w.k * std::sin(cfg.incidence_angle_B);
  w.cm_mode = mode;
  w.validate();
  return w;
}

cplx wave_value(const TwoPhotonWave& wave, double y1, double y2, double z) {
  if (z < 0.0) throw ConfigError("z must be >= 0");
  const WaveAt at = wave_at(wave, z);
  const double Y = 0.5 * (y1 + y2);
  const double r = y1 - y2;
  const cplx g = at.cm.log_prefactor + at.cm.exponent(Y);
  cplx psi = std::exp(g + at.rel.log_prefactor + at.rel.exponent(r));
  if (wave.symmetrized) psi += std::exp(g + at.rel.log_prefactor + at.rel.exponent(-r));
  return psi;
}

double relative_log_density(const TwoPhotonWave& wave, double y1, double y2, double z) {
  if (z < 0.0) throw ConfigError("z must be >= 0");
  const WaveAt at = wave_at(wave, z);
  const RelativeFactor f = relative_factor(at, y1 - y2);
  return relative_log_density_at(at, 0.5 * (y1 + y2), f);
}

std::optional<Velocity> try_bohm_velocity(const TwoPhotonWave& wave, double y1, double y2,
                                          double z, double node_floor) noexcept {
  const WaveAt at = wave_at(wave, z);
  return velocity_at(at, wave.k, y1, y2, std::log(node_floor));
}

Velocity bohm_velocity(const TwoPhotonWave& wave, double y1, double y2, double z,
                       double node_floor) {
  if (z < 0.0) throw ConfigError("z must be >= 0");
  const auto v = try_bohm_velocity(wave, y1, y2, z, node_floor);
  if (!v) throw NodeProximity("|Psi|^2 below node floor");
  return *v;
}

// Dormand-Prince 5(4) tableau.
namespace dp {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dp

TrajectoryPair integrate_pair(const TwoPhotonWave& wave, double y1_0, double y2_0, double z_max,
                              const IntegratorOptions& opt) {
  if (!(z_max > 0.0)) throw ConfigError("z_max must be > 0");
  wave.validate();
  const double log_floor = std::log(opt.node_floor);
  const double atol =
      opt.atol > 0.0 ? opt.atol : opt.rtol * std::abs(wave.slit_center_B - wave.slit_center_A);
  const double h_min = opt.min_step_fraction * z_max;
  const double z1 = opt.detector1_plane > 0.0 ? std::min(opt.detector1_plane, z_max) : z_max;
  const double z2 = opt.detector2_plane > 0.0 ? std::min(opt.detector2_plane, z_max) : z_max;
  std::array<double, 3> stops{z1, z2, z_max};
  std::sort(stops.begin(), stops.end());

  TrajectoryPair pair;
  pair.y1_0 = y1_0;
  pair.y2_0 = y2_0;

  using State = std::array<double, 2>;
  const auto f = [&](double z, const State& y) -> std::optional<State> {
    const auto v = velocity_at(wave_at(wave, z), wave.k, y[0], y[1], log_floor);
    if (!v) return std::nullopt;
    return State{v->v1, v->v2};
  };

  double z = 0.0;
  State y{y1_0, y2_0};
  auto k1o = f(z, y);
  if (!k1o) {
    pair.valid = false;
    pair.failure = "NodeProximity";
    return pair;
  }
  State k1 = *k1o;
  if (opt.record_path) pair.samples.push_back({z, y[0], y[1]});

  const auto record_plane = [&](double zp, const State& ys, const State& vs) {
    if (zp == z1) {
      pair.at_detector1 = {zp, ys[0], ys[1]};
      pair.semiplane1 = side(ys[0], vs[0]);
    }
    if (zp == z2) {
      pair.at_detector2 = {zp, ys[0], ys[1]};
      pair.semiplane2 = side(ys[1], vs[1]);
    }
  };

  double h = std::min(1e-3 * wave.diffraction_length(), z_max);
  std::size_t next_stop = 0;
  while (next_stop < stops.size() && stops[next_stop] <= z) ++next_stop;

  while (z < z_max) {
    if (pair.steps + pair.rejected_steps >= opt.max_steps) {
      pair.valid = false;
      pair.failure = "MaxSteps";
      return pair;
    }
    const double target = stops[next_stop];
    const bool hits = h >= target - z;
    const double step = hits ? target - z : h;

    State tmp;
    std::optional<State> k2, k3, k4, k5, k6, k7;
    bool node = false;
    tmp = {y[0] + step * (dp::a21 * k1[0]), y[1] + step * (dp::a21 * k1[1])};
    if (!(k2 = f(z + dp::c2 * step, tmp))) node = true;
    if (!node) {
      tmp = {y[0] + step * (dp::a31 * k1[0] + dp::a32 * (*k2)[0]),
             y[1] + step * (dp::a31 * k1[1] + dp::a32 * (*k2)[1])};
      if (!(k3 = f(z + dp::c3 * step, tmp))) node = true;
    }
    if (!node) {
      tmp = {y[0] + step * (dp::a41 * k1[0] + dp::a42 * (*k2)[0] + dp::a43 * (*k3)[0]),
             y[1] + step * (dp::a41 * k1[1] + dp::a42 * (*k2)[1] + dp::a43 * (*k3)[1])};
      if (!(k4 = f(z + dp::c4 * step, tmp))) node = true;
    }
    if (!node) {
      tmp = {y[0] + step * (dp::a51 * k1[0] + dp::a52 * (*k2)[0] + dp::a53 * (*k3)[0] +
                            dp::a54 * (*k4)[0]),
             y[1] + step * (dp::a51 * k1[1] + dp::a52 * (*k2)[1] + dp::a53 * (*k3)[1] +
                            dp::a54 * (*k4)[1])};
      if (!(k5 = f(z + dp::c5 * step, tmp))) node = true;
    }
    if (!node) {
      tmp = {y[0] + step * (dp::a61 * k1[0] + dp::a62 * (*k2)[0] + dp::a63 * (*k3)[0] +
                            dp::a64 * (*k4)[0] + dp::a65 * (*k5)[0]),
             y[1] + step * (dp::a61 * k1[1] + dp::a62 * (*k2)[1] + dp::a63 * (*k3)[1] +
                            dp::a64 * (*k4)[1] + dp::a65 * (*k5)[1])};
      if (!(k6 = f(z + step, tmp))) node = true;
    }
    State y5{};
    if (!node) {
      y5 = {y[0] + step * (dp::b1 * k1[0] + dp::b3 * (*k3)[0] + dp::b4 * (*k4)[0] +
                           dp::b5 * (*k5)[0] + dp::b6 * (*k6)[0]),
            y[1] + step * (dp::b1 * k1[1] + dp::b3 * (*k3)[1] + dp::b4 * (*k4)[1] +
                           dp::b5 * (*k5)[1] + dp::b6 * (*k6)[1])};
      if (!(k7 = f(z + step, y5))) node = true;
    }
    if (node) {
      // Never evaluate through a node: retry with a much shorter step.
      ++pair.rejected_steps;
      h = 0.25 * step;
      if (h < h_min) {
        pair.valid = false;
        pair.failure = "StepUnderflow";
        return pair;
      }
      continue;
    }

    double err = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double e = step * (dp::e1 * k1[i] + dp::e3 * (*k3)[i] + dp::e4 * (*k4)[i] +
                               dp::e5 * (*k5)[i] + dp::e6 * (*k6)[i] + dp::e7 * (*k7)[i]);
      const double scale = atol + opt.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
      err += (e / scale) * (e / scale);
    }
    err = std::sqrt(0.5 * err);

    if (err <= 1.0) {
      z = hits ? target : z + step;
      y = y5;
      k1 = *k7;
      ++pair.steps;
      pair.max_sum_drift = std::max(pair.max_sum_drift, std::abs((y[0] + y[1]) - (y1_0 + y2_0)));
      if (opt.record_path) pair.samples.push_back({z, y[0], y[1]});
      if (hits) {
        record_plane(z, y, k1);
        ++next_stop;
        while (next_stop < stops.size() && stops[next_stop] <= z) ++next_stop;
      }
      const double grow = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
      const double proposed = step * std::clamp(grow, 0.2, 5.0);
      // A step truncated to land on a plane does not shrink the controller's estimate.
      h = hits ? std::max(h, proposed) : proposed;
    } else {
      ++pair.rejected_steps;
      h = step * std::max(0.2, 0.9 * std::pow(err, -0.2));
      if (h < h_min) {
        pair.valid = false;
        pair.failure = "StepUnderflow";
        return pair;
      }
    }
  }
  if (!opt.record_path) {
    pair.samples.push_back({0.0, y1_0, y2_0});
    pair.samples.push_back({z, y[0], y[1]});
  }
  return pair;
}

TrajectoryPair integrate_pair_checked(const TwoPhotonWave& wave, double y1_0, double y2_0,
                                      double z_max, const IntegratorOptions& options) {
  TrajectoryPair pair = integrate_pair(wave, y1_0, y2_0, z_max, options);
  if (!pair.valid) {
    if (pair.failure == "NodeProximity") throw NodeProximity("initial point sits on a node");
    throw StepUnderflow("trajectory integration failed: " + pair.failure);
  }
  return pair;
}

double TrajectoryEnsemble::same_fraction() const {
  const std::size_t valid = same_semiplane + opposite_semiplane;
  return valid == 0 ? 0.0 : static_cast<double>(same_semiplane) / static_cast<double>(valid);
}

TrajectorySample sample_initial(const TwoPhotonWave& wave, InitialSampling sampling,
                                std::uint64_t seed, std::uint64_t index) {
  auto rng = make_stream(seed, index);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const WaveAt at = wave_at(wave, 0.0);
  const double Yc = 0.5 * (wave.slit_center_A + wave.slit_center_B);

  // Acceptance ratio |F(r) + F(-r)|^2 / (2 (|F(r)|^2 + |F(-r)|^2)) <= 1 turns the
  // two-term proposal mixture into exact |Psi|^2 sampling.
  const auto accept = [&](double r) {
    if (!wave.symmetrized) return true;
    const RelativeFactor f = relative_factor(at, r);
    const double num = std::norm(f.a + f.b);
    const double den = 2.0 * (std::norm(f.a) + std::norm(f.b));
    return uniform(rng) * den < num;
  };

  for (;;) {
    double y1, y2;
    const bool swap = wave.symmetrized && uniform(rng) < 0.5;
    if (sampling == InitialSampling::BornRule) {
      y1 = wave.slit_center_A + wave.waist * normal(rng);
      y2 = wave.slit_center_B + wave.waist * normal(rng);
      if (swap) std::swap(y1, y2);
    } else {
      // On the mirror line y1 + y2 = 2 Yc the density of y1 is |F(2 (y1 - Yc))|^2-like,
      // a Gaussian of rms waist / sqrt(2) about each slit centre.
      const double centre = swap ? wave.slit_center_B : wave.slit_center_A;
      y1 = centre + wave.waist / std::sqrt(2.0) * normal(rng);
      y2 = 2.0 * Yc - y1;
    }
    if (accept(y1 - y2)) return {0.0, y1, y2};
  }
}

TrajectoryEnsemble run_ensemble(const TwoPhotonWave& wave, std::size_t n_pairs,
                                InitialSampling sampling, std::uint64_t seed, double z_max,
                                const IntegratorOptions& options) {
  if (n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
  wave.validate();
  IntegratorOptions opt = options;
  opt.record_path = false;

  TrajectoryEnsemble ens;
  ens.seed = seed;
  ens.sampling = sampling;
  ens.pairs.resize(n_pairs);
  std::vector<double> drift(n_pairs, 0.0);

  detail::parallel_for(n_pairs, [&](std::size_t i) {
    const TrajectorySample start = sample_initial(wave, sampling, seed, i);
    const TrajectoryPair pair = integrate_pair(wave, start.y1, start.y2, z_max, opt);
    PairOutcome& out = ens.pairs[i];
    out.id = i;
    out.y1_0 = start.y1;
    out.y2_0 = start.y2;
    out.excluded = !pair.valid;
    if (pair.valid) {
      out.y1_det = pair.at_detector1.y1;
      out.y2_det = pair.at_detector2.y2;
      out.same_semiplane = pair.same_semiplane();
      drift[i] = pair.max_sum_drift;
    }
  });

  for (std::size_t i = 0; i < n_pairs; ++i) {
    const PairOutcome& p = ens.pairs[i];
    if (p.excluded) {
      ++ens.excluded;
    } else if (p.same_semiplane) {
      ++ens.same_semiplane;
    } else {
      ++ens.opposite_semiplane;
    }
    ens.max_sum_drift = std::max(ens.max_sum_drift, drift[i]);
  }
  return ens;
}

const char* to_string(CenterOfMassMode mode) {
  return mode == CenterOfMassMode::Anticorrelated ? "anticorrelated" : "free";
}

const char* to_string(InitialSampling sampling) {
  return sampling == InitialSampling::BornRule ? "born" : "antisymmetric";
}

}  // namespace biphoton::dbb
