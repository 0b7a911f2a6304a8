#include "biphoton/event_sim.hpp"

#include <cmath>
#include <random>

#include "biphoton/error.hpp"
#include "biphoton/random.hpp"

namespace biphoton::events {

namespace {

constexpr double kSecondsPerDay = 86400.0;

std::int64_t poisson(std::mt19937_64& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::int64_t> dist(mean);
  return dist(rng);
}

}  // namespace

double DriftModel::factor(double t_seconds) const {
  const double days = t_seconds / kSecondsPerDay;
  switch (kind) {
    case Kind::None:
      return 1.0;
    case Kind::Linear:
      return std::max(0.0, 1.0 - rate_per_day * days);
    case Kind::Exponential:
      return std::exp(-rate_per_day * days);
  }
  return 1.0;
}

void RunSpec::validate() const {
  if (!(duration > 0.0)) throw ConfigError("duration must be > 0");
  if (n_acquisitions < 1) throw ConfigError("n_acquisitions must be >= 1");
  if (fixed_detector != 1 && fixed_detector != 2) throw ConfigError("fixed_detector must be 1 or 2");
  if (mobile_positions.empty()) throw ConfigError("at least one mobile position is required");
  if (rate_scale < 0.0 || singles_rate_fixed < 0.0 || singles_rate_mobile < 0.0) {
    throw ConfigError("rates must be >= 0");
  }
  for (double eff : {efficiency_fixed, efficiency_mobile}) {
    if (!(eff > 0.0 && eff <= 1.0)) throw ConfigError("efficiency must lie in (0, 1]");
  }
  if (!(tac_window > 0.0)) throw ConfigError("tac_window must be > 0");
  if (!(background_shift > tac_window)) {
    throw ConfigError("background_shift must move the window off the coincidence peak");
  }
  if (drift.rate_per_day < 0.0) throw ConfigError("drift rate must be >= 0");
}

PatternSource sqm_source(const ApparatusConfig& cfg, const sqm::SmearingSpec& spec,
                         double mobile_aperture, int mobile_detector) {
  cfg.validate();
  spec.validate();
  PatternSource src;
  src.name = "sqm";
  src.rate = [cfg, spec, mobile_aperture, mobile_detector](double y1, double y2) {
    const double a1 = mobile_detector == 1 ? mobile_aperture : 0.0;
    const double a2 = mobile_detector == 2 ? mobile_aperture : 0.0;
    return sqm::aperture_averaged_coincidence(cfg, spec, y1, y2, a1, a2);
  };
  return src;
}

PatternSource dbb_source(PatternSource sqm, double same_semiplane_weight) {
  if (same_semiplane_weight < 0.0) throw ConfigError("same_semiplane_weight must be >= 0");
  PatternSource src;
  src.name = "dbb";
  src.rate = [inner = std::move(sqm.rate), same_semiplane_weight](double y1, double y2) {
    const double base = inner(y1, y2);
    const bool same = (y1 < 0.0) == (y2 < 0.0);
    return same ? same_semiplane_weight * base : base;
  };
  return src;
}

std::vector<CountExpectation> expected_counts(const ApparatusConfig& cfg, const RunSpec& run,
                                              const PatternSource& source) {
  cfg.validate();
  run.validate();
  std::vector<CountExpectation> out;
  out.reserve(run.mobile_positions.size() * static_cast<std::size_t>(run.n_acquisitions));
  const double T = run.duration;
  const double singles_f = run.singles_rate_fixed * run.efficiency_fixed * T;
  const double singles_m = run.singles_rate_mobile * run.efficiency_mobile * T;
  const double accidentals = singles_f * singles_m / (T * T) * run.tac_window * T;
  int index = 0;
  for (double y_mobile : run.mobile_positions) {
    const double y1 = run.fixed_detector == 1 ? run.fixed_position : y_mobile;
    const double y2 = run.fixed_detector == 1 ? y_mobile : run.fixed_position;
    const double c = source.rate(y1, y2);
    if (c < 0.0) throw NumericalError("pattern source returned a negative rate");
    const double true_mean = run.rate_scale * c * run.efficiency_fixed * run.efficiency_mobile * T;
    for (int j = 0; j < run.n_acquisitions; ++j, ++index) {
      CountExpectation e;
      e.acquisition = index;
      e.time_start = index * T;
      e.duration = T;
      e.mobile_position = y_mobile;
      e.singles_fixed = singles_f;
      e.singles_mobile = singles_m;
      e.true_coincidences = true_mean;
      e.accidentals = accidentals;
      out.push_back(e);
    }
  }
  return out;
}

std::vector<CountExpectation> apply_drift(std::vector<CountExpectation> records,
                                          const DriftModel& drift, double tac_window) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].time_start < records[i - 1].time_start) {
      throw ConfigError("apply_drift requires records in time order");
    }
  }
  if (drift.kind == DriftModel::Kind::None || drift.rate_per_day == 0.0) return records;
  for (auto& r : records) {
    const double f = drift.factor(r.time_start + 0.5 * r.duration);
    r.singles_fixed *= f;
    r.singles_mobile *= f;
    r.true_coincidences *= f;
    r.accidentals = r.singles_fixed * r.singles_mobile / r.duration * tac_window;
  }
  return records;
}

std::vector<CountRecord> realize(const std::vector<CountExpectation>& means, std::uint64_t seed,
                                 std::uint64_t run_id) {
  auto rng = make_stream(seed, run_id, 0xC0FFEE);
  std::vector<CountRecord> out;
  out.reserve(means.size());
  for (const auto& m : means) {
    CountRecord r;
    r.acquisition = m.acquisition;
    r.duration = m.duration;
    r.mobile_position = m.mobile_position;
    r.singles_fixed = poisson(rng, m.singles_fixed);
    r.singles_mobile = poisson(rng, m.singles_mobile);
    r.coincidences_raw = poisson(rng, m.true_coincidences + m.accidentals);
    r.accidentals = poisson(rng, m.accidentals);
    out.push_back(r);
  }
  return out;
}

std::vector<CountRecord> simulate_run(const ApparatusConfig& cfg, const RunSpec& run,
                                      const PatternSource& source, std::uint64_t seed,
                                      std::uint64_t run_id) {
  auto means = apply_drift(expected_counts(cfg, run, source), run.drift, run.tac_window);
  return realize(means, seed, run_id);
}

double calibrate_rate_scale(const RunSpec& run, const PatternSource& source,
                            double net_per_acquisition) {
  run.validate();
  if (!(net_per_acquisition > 0.0)) throw ConfigError("net_per_acquisition must be > 0");
  const double y_mobile = run.mobile_positions.front();
  const double y1 = run.fixed_detector == 1 ? run.fixed_position : y_mobile;
  const double y2 = run.fixed_detector == 1 ? y_mobile : run.fixed_position;
  const double c = source.rate(y1, y2);
  if (!(c > 0.0)) throw NumericalError("pattern rate vanishes at the calibration point");
  return net_per_acquisition / (c * run.efficiency_fixed * run.efficiency_mobile * run.duration);
}

RunSpec same_semiplane_protocol(const ApparatusConfig& /*cfg*/, const PatternSource& sqm,
                                double net_per_acquisition) {
  RunSpec run;
  run.duration = 1800.0;
  run.n_acquisitions = 35;
  run.fixed_detector = 2;
  run.fixed_position = -0.055;
  run.mobile_positions = {-0.017};
  run.rate_scale = calibrate_rate_scale(run, sqm, net_per_acquisition);
  return run;
}

RunSpec interference_scan_protocol(const PatternSource& sqm, double peak_net_per_acquisition) {
  RunSpec run;
  run.duration = 3600.0;
  run.n_acquisitions = 10;
  run.fixed_detector = 2;
  run.fixed_position = -0.01;
  run.mobile_positions = {0.0};
  run.rate_scale = calibrate_rate_scale(run, sqm, peak_net_per_acquisition);
  run.mobile_positions = {-0.012, -0.008, -0.004, 0.0, 0.004, 0.008};
  return run;
}

}  // namespace biphoton::events
