#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biphoton/geometry.hpp"

namespace biphoton::dbb {

/// How the pair's centre of mass Y = (y1 + y2)/2 evolves behind the slits.
enum class CenterOfMassMode {
  // Transverse momenta of the pair are perfectly anticorrelated (phase matching):
  // the centre-of-mass packet translates rigidly and never spreads.
  Anticorrelated,
  // Two independent free photons: the centre-of-mass packet spreads like any
  // free Gaussian.
  Free,
};

/// Symmetrized transverse two-photon wave behind the double slit.
///
/// Each slit emits a Gaussian mode (|psi|^2 rms width `waist`) with a transverse
/// kick k sin(theta_inc); the propagation distance z plays the role of time
/// with i dpsi/dz = -(1/2k) d^2psi/dy^2 per photon. Written in centre-of-mass and
/// relative coordinates the wave factorizes exactly as
///   Psi(y1, y2, z) = G(Y, z) [F(r, z) + F(-r, z)],   Y = (y1+y2)/2, r = y1 - y2,
/// where F(r) G(Y) = psi_A(y1) psi_B(y2). Amplitudes are not normalized.
struct TwoPhotonWave {
  double slit_center_A = -50e-6;
  double slit_center_B = 50e-6;
  double waist = 5e-6;
  double kick_A = 0.0;  // rad/m
  double kick_B = 0.0;
  double k = 2.0 * kPi / 702e-9;
  bool symmetrized = true;  // false drops the exchanged product term
  CenterOfMassMode cm_mode = CenterOfMassMode::Anticorrelated;

  void validate() const;

  /// Slit centres at -/+ s/2, waist w/2 unless given, kicks from the incidence angles.
  static TwoPhotonWave from_config(const ApparatusConfig& cfg,
                                   std::optional<double> waist = std::nullopt,
                                   CenterOfMassMode mode = CenterOfMassMode::Anticorrelated);

  /// Diffraction length 2 k waist^2 over which a slit mode starts to spread.
  double diffraction_length() const { return 2.0 * k * waist * waist; }
};

std::complex<double> wave_value(const TwoPhotonWave& wave, double y1, double y2, double z);

/// ln |Psi|^2 minus ln of an upper bound on max |Psi(., ., z)|^2, so always <= 0.
/// Finite even where Psi itself underflows.
double relative_log_density(const TwoPhotonWave& wave, double y1, double y2, double z);

struct Velocity {
  double v1 = 0.0;  // dy1/dz
  double v2 = 0.0;
};

/// Guidance law v_i = (1/k) Im(d_i Psi / Psi). Throws NodeProximity when
/// |Psi|^2 < node_floor * peak |Psi|^2.
Velocity bohm_velocity(const TwoPhotonWave& wave, double y1, double y2, double z,
                       double node_floor = 1e-30);

/// Same as bohm_velocity, but returns nullopt at a node instead of throwing.
std::optional<Velocity> try_bohm_velocity(const TwoPhotonWave& wave, double y1, double y2,
                                          double z, double node_floor = 1e-30) noexcept;

struct IntegratorOptions {
  double rtol = 1e-8;
  double atol = 0.0;  // m; 0 selects rtol * slit separation
  double min_step_fraction = 1e-9;  // of z_max
  double node_floor = 1e-30;
  std::size_t max_steps = 200000;
  bool record_path = false;
  // Planes where photon 1 and photon 2 are detected; 0 selects z_max.
  double detector1_plane = 0.0;
  double detector2_plane = 0.0;
};

struct TrajectorySample {
  double z = 0.0;
  double y1 = 0.0;
  double y2 = 0.0;
};

enum class Semiplane { Left = -1, Right = 1 };

struct TrajectoryPair {
  double y1_0 = 0.0;
  double y2_0 = 0.0;
  std::vector<TrajectorySample> samples;  // z strictly increasing
  TrajectorySample at_detector1;          // state where photon 1 is detected
  TrajectorySample at_detector2;
  Semiplane semiplane1 = Semiplane::Right;  // of y1 at detector 1
  Semiplane semiplane2 = Semiplane::Right;  // of y2 at detector 2
  std::size_t steps = 0;
  std::size_t rejected_steps = 0;
  double max_sum_drift = 0.0;  // max |(y1+y2)(z) - (y1+y2)(0)| over accepted steps
  bool valid = true;
  std::string failure;

  bool same_semiplane() const { return semiplane1 == semiplane2; }
};

/// Adaptive Dormand-Prince 5(4) integration of dy_i/dz = v_i from z = 0 to z_max.
/// Node encounters shrink the step; a step below min_step_fraction * z_max marks
/// the pair invalid (failure = "StepUnderflow").
TrajectoryPair integrate_pair(const TwoPhotonWave& wave, double y1_0, double y2_0, double z_max,
                              const IntegratorOptions& options = {});

/// Same as integrate_pair but throws StepUnderflow / NodeProximity instead of
/// returning an invalid pair.
TrajectoryPair integrate_pair_checked(const TwoPhotonWave& wave, double y1_0, double y2_0,
                                      double z_max, const IntegratorOptions& options = {});

enum class InitialSampling {
  BornRule,       // (y1, y2) drawn from |Psi(y1, y2, 0)|^2
  Antisymmetric,  // y1 drawn from |Psi(y1, y2, 0)|^2 on the mirror line, y2 its mirror image
};

struct PairOutcome {
  std::size_t id = 0;
  double y1_0 = 0.0;
  double y2_0 = 0.0;
  double y1_det = 0.0;
  double y2_det = 0.0;
  bool same_semiplane = false;
  bool excluded = false;
};

struct TrajectoryEnsemble {
  std::vector<PairOutcome> pairs;
  std::uint64_t seed = 0;
  InitialSampling sampling = InitialSampling::BornRule;
  std::size_t same_semiplane = 0;
  std::size_t opposite_semiplane = 0;
  std::size_t excluded = 0;
  double max_sum_drift = 0.0;  // max over valid pairs of TrajectoryPair::max_sum_drift

  std::size_t size() const { return pairs.size(); }
  double same_fraction() const;
};

/// Initial positions for pair `index` of a run; deterministic in (seed, index).
TrajectorySample sample_initial(const TwoPhotonWave& wave, InitialSampling sampling,
                                std::uint64_t seed, std::uint64_t index);

TrajectoryEnsemble run_ensemble(const TwoPhotonWave& wave, std::size_t n_pairs,
                                InitialSampling sampling, std::uint64_t seed, double z_max,
                                const IntegratorOptions& options = {});

const char* to_string(CenterOfMassMode mode);
const char* to_string(InitialSampling sampling);

}  // namespace biphoton::dbb
