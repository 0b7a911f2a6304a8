#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biphoton/event_sim.hpp"

namespace biphoton::analysis {

struct Measurement {
  double value = 0.0;
  double uncertainty = 0.0;
  bool floored = false;  // uncertainty set to the 1-count floor
};

/// net = raw - accidentals, sigma = sqrt(raw + accidentals); sigma = 1 when both are 0.
Measurement subtract_background(const events::CountRecord& record);

struct NormalizedPoint {
  double mobile_position = 0.0;
  double value = 0.0;  // counts per acquisition, drift corrected
  double uncertainty = 0.0;
  int n_acquisitions = 0;
  std::int64_t raw_total = 0;
  std::int64_t accidentals_total = 0;
  std::int64_t singles_fixed_total = 0;
  bool floored = false;
};

/// mean(net / singles_fixed) * mean(singles_fixed). The uncertainty is the
/// standard error of the ratio over acquisitions times mean(singles_fixed); with a
/// single acquisition (or identical ratios) it falls back to Poisson propagation.
/// Throws ZeroSingles when a record has singles_fixed = 0. A positive
/// singles_reference replaces mean(singles_fixed) as the common multiplier.
NormalizedPoint normalize_series(const std::vector<events::CountRecord>& records,
                                 double singles_reference = 0.0);

/// Groups records by mobile position (ascending) and normalizes each group. All
/// groups share the run-wide mean of singles_fixed as reference, so drift between
/// positions cancels too.
std::vector<NormalizedPoint> normalize_by_position(const std::vector<events::CountRecord>& records);

enum class ModelKind {
  Sqm,       // scale * shape(x) [+ offset]
  Constant,  // c
  Linear,    // a + b x
};

struct FitModel {
  ModelKind kind = ModelKind::Sqm;
  std::vector<double> shape;  // Sqm only: model shape at each point's position
  bool with_offset = false;   // Sqm only

  static FitModel sqm(std::vector<double> shape, bool with_offset = false);
  static FitModel constant();
  static FitModel linear();
  std::string id() const;
};

struct FitResult {
  std::string model;
  std::vector<std::string> parameter_names;
  std::vector<double> parameters;
  std::vector<double> parameter_errors;
  double chi2 = 0.0;
  int dof = 0;
  double reduced_chi2 = 0.0;
  double p_value = 0.0;  // P(chi2_dof >= chi2)
};

/// Weighted least squares minimum of sum((data - model) / sigma)^2.
/// Throws SingularFit on a rank-deficient design, ConfigError when dof < 1 or a
/// sigma is not positive.
FitResult fit_model(const std::vector<NormalizedPoint>& points, const FitModel& model);

/// chi^2 of the model with the given parameters (no minimization).
double chi2_of(const std::vector<NormalizedPoint>& points, const FitModel& model,
               const std::vector<double>& parameters);

/// Upper tail of the chi^2 distribution.
double chi2_p_value(double chi2, int dof);

/// z = net / uncertainty. Throws ConfigError when uncertainty <= 0.
double null_significance(double net, double uncertainty);

/// Aggregate of a series: total net counts over all acquisitions divided by the
/// number of acquisitions, with the Poisson uncertainty of that mean.
Measurement mean_net_per_acquisition(const std::vector<events::CountRecord>& records);

/// Smeared, aperture-averaged pattern at each point's mobile position.
std::vector<double> sqm_shape(const ApparatusConfig& cfg, const sqm::SmearingSpec& spec,
                              const std::vector<NormalizedPoint>& points, double fixed_position,
                              int fixed_detector, double mobile_aperture);

}  // namespace biphoton::analysis
