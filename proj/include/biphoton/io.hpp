#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "biphoton/analysis.hpp"
#include "biphoton/dbb_dynamics.hpp"
#include "biphoton/event_sim.hpp"
#include "biphoton/geometry.hpp"
#include "biphoton/sqm_pattern.hpp"

namespace biphoton::io {

inline constexpr const char* kFormatVersion = "1";

struct GridSettings {
  sqm::AxisKind kind = sqm::AxisKind::Position;
  sqm::AxisRange axis1{-0.07, 0.07, 1e-3};
  sqm::AxisRange axis2{-0.07, 0.07, 1e-3};
};

/// theta1 (or y1) scan with the other detector held fixed.
struct SectionSettings {
  int fixed_detector = 2;
  double fixed_position = -0.01;
  sqm::AxisRange mobile{-0.07, 0.07, 1e-4};
  double aperture = 0.0;  // lens diameter on the mobile detector; 0 = point detector
};

struct EnsembleSettings {
  std::size_t n_pairs = 10000;
  dbb::InitialSampling sampling = dbb::InitialSampling::Antisymmetric;
  dbb::CenterOfMassMode cm_mode = dbb::CenterOfMassMode::Anticorrelated;
  double waist = 0.0;  // 0 selects slit_width_w / 2
  double rtol = 1e-8;
  std::size_t n_paths = 16;  // trajectories subcommand
};

struct SimulationSettings {
  events::RunSpec run;
  std::string source = "sqm";  // sqm | dbb
  double dbb_same_semiplane_weight = 0.0;
  double mobile_aperture = -1.0;  // < 0 selects iris_diameter
  // > 0: rate_scale tuned so the SQM mean net count per acquisition at the first
  // mobile position equals this value.
  double net_target = 78.0;
  bool fit_offset = false;
};

/// Everything a CLI run reads from its config file.
struct Settings {
  ApparatusConfig apparatus;
  bool smearing_enabled = true;
  int quadrature_points = 21;
  sqm::DispersionCoupling coupling = sqm::DispersionCoupling::Anticorrelated;
  GridSettings grid;
  SectionSettings section;
  EnsembleSettings ensemble;
  SimulationSettings simulation;
  std::uint64_t seed = 1;

  sqm::SmearingSpec smearing() const;
  double mobile_aperture() const;
  void validate() const;
};

/// JSON form of the settings. Apparatus fields sit at the top level under their
/// struct field names; `*_deg` variants of the incidence angles are accepted on input.
nlohmann::json to_json(const Settings& s);

/// Unknown keys are rejected with ConfigError so typos do not pass silently.
Settings settings_from_json(const nlohmann::json& j, Settings base = {});
Settings load_settings(const std::string& path, Settings base = {});

/// Applies "key=value" (dotted key path, value parsed as JSON or taken as a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

// CSV writers and readers. Every file starts with "# <kind> v<version>".
void write_pattern_csv(std::ostream& os, const sqm::CoincidencePattern& pattern);
nlohmann::json pattern_metadata(const sqm::CoincidencePattern& pattern);
nlohmann::json pattern_json(const sqm::CoincidencePattern& pattern);

void write_ensemble_csv(std::ostream& os, const dbb::TrajectoryEnsemble& ensemble);
nlohmann::json ensemble_summary(const dbb::TrajectoryEnsemble& ensemble,
                                const dbb::TwoPhotonWave& wave);
/// Reads an ensemble CSV back; throws ConfigError on malformed or empty input.
std::vector<dbb::PairOutcome> read_ensemble_csv(std::istream& is);

void write_counts_csv(std::ostream& os, const std::vector<events::CountRecord>& records);
std::vector<events::CountRecord> read_counts_csv(std::istream& is);
nlohmann::json counts_json(const std::vector<events::CountRecord>& records);
std::vector<events::CountRecord> counts_from_json(const nlohmann::json& j);

void write_points_csv(std::ostream& os, const std::vector<analysis::NormalizedPoint>& points);
nlohmann::json points_json(const std::vector<analysis::NormalizedPoint>& points);
nlohmann::json fit_json(const analysis::FitResult& fit);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

}  // namespace biphoton::io
