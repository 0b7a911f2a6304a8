#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "biphoton/geometry.hpp"
#include "biphoton/sqm_pattern.hpp"

namespace biphoton::events {

/// Multiplicative decay of pump power (and crystal output) with time.
struct DriftModel {
  enum class Kind { None, Linear, Exponential };
  Kind kind = Kind::None;
  double rate_per_day = 0.0;  // relative power lost per day

  /// Power factor at time t (seconds since the start of the run), never negative.
  double factor(double t_seconds) const;
};

/// Acquisition protocol: one detector fixed, the other stepped through positions,
/// n_acquisitions of `duration` seconds at each.
struct RunSpec {
  double duration = 1800.0;
  int n_acquisitions = 35;
  int fixed_detector = 2;
  double fixed_position = -0.055;
  std::vector<double> mobile_positions{-0.017};
  // True pair rate per unit of C (counts/s) before detection losses.
  double rate_scale = 1.0;
  // Photon rates on each detector before detection losses (counts/s).
  double singles_rate_fixed = 6.5e4;
  double singles_rate_mobile = 6.5e4;
  double efficiency_fixed = 0.30;
  double efficiency_mobile = 0.30;
  double tac_window = 2.5e-9;
  double background_shift = 16e-9;
  DriftModel drift;

  void validate() const;
  int mobile_detector() const { return fixed_detector == 1 ? 2 : 1; }
};

/// Relative true-coincidence rate as a function of detector positions (y1, y2).
struct PatternSource {
  std::string name;
  std::function<double(double y1, double y2)> rate;
};

/// Smeared coincidence pattern averaged over the mobile detector's aperture.
PatternSource sqm_source(const ApparatusConfig& cfg, const sqm::SmearingSpec& spec,
                         double mobile_aperture, int mobile_detector = 1);

/// dBB prediction: the SQM rate when the detectors are in opposite semiplanes,
/// the SQM rate times `same_semiplane_weight` when they share one. The weight is
/// the ratio of the dBB ensemble same-semiplane fraction to the SQM one (0 for
/// the non-crossing prediction).
PatternSource dbb_source(PatternSource sqm, double same_semiplane_weight);

/// Mean counts for one acquisition.
struct CountExpectation {
  int acquisition = 0;
  double time_start = 0.0;  // seconds since the start of the run
  double duration = 0.0;
  double mobile_position = 0.0;
  double singles_fixed = 0.0;
  double singles_mobile = 0.0;
  double true_coincidences = 0.0;
  double accidentals = 0.0;  // also the mean of the delay-shifted channel
};

struct CountRecord {
  int acquisition = 0;
  std::int64_t singles_fixed = 0;
  std::int64_t singles_mobile = 0;
  std::int64_t coincidences_raw = 0;
  std::int64_t accidentals = 0;
  double duration = 0.0;
  double mobile_position = 0.0;

  bool operator==(const CountRecord&) const = default;
};

/// Undrifted means for every acquisition, in time order.
std::vector<CountExpectation> expected_counts(const ApparatusConfig& cfg, const RunSpec& run,
                                              const PatternSource& source);

/// Scales singles and true-coincidence means by the drift factor at the centre of
/// each acquisition; accidentals follow the product of the drifted singles.
std::vector<CountExpectation> apply_drift(std::vector<CountExpectation> records,
                                          const DriftModel& drift, double tac_window);

/// Poisson realization: raw = Poisson(true + accidental), delay-shifted channel
/// = independent Poisson(accidental), singles = Poisson(mean).
std::vector<CountRecord> realize(const std::vector<CountExpectation>& means, std::uint64_t seed,
                                 std::uint64_t run_id = 0);

std::vector<CountRecord> simulate_run(const ApparatusConfig& cfg, const RunSpec& run,
                                      const PatternSource& source, std::uint64_t seed,
                                      std::uint64_t run_id = 0);

/// rate_scale giving a mean net count of `net_per_acquisition` per acquisition at
/// the first mobile position under `source`.
double calibrate_rate_scale(const RunSpec& run, const PatternSource& source,
                            double net_per_acquisition);

/// Same-semiplane protocol at full experimental scale: 35 x 30 min at
/// (y1, y2) = (-1.7 cm, -5.5 cm), rate tuned so that the SQM mean net signal is
/// `net_per_acquisition`. Singles give ~1.7e3 accidentals per 30 min.
RunSpec same_semiplane_protocol(const ApparatusConfig& cfg, const PatternSource& sqm,
                                double net_per_acquisition = 78.0);

/// Interference scan: detector 2 fixed at -1 cm, detector 1 stepped over six
/// positions half a fringe apart (-1.2 cm to +0.8 cm), 10 x 1 h per position.
/// The rate is set so the mean net count per hour at y1 = 0 (a fringe maximum)
/// is `peak_net_per_acquisition`.
RunSpec interference_scan_protocol(const PatternSource& sqm,
                                   double peak_net_per_acquisition = 150.0);

}  // namespace biphoton::events
