#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "biphoton/analysis.hpp"
#include "biphoton/cli.hpp"
#include "biphoton/dbb_dynamics.hpp"
#include "biphoton/error.hpp"
#include "biphoton/event_sim.hpp"
#include "biphoton/geometry.hpp"
#include "biphoton/sqm_pattern.hpp"

namespace py = pybind11;
using namespace biphoton;

namespace {

py::array_t<double> column(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

py::dict pattern_dict(const sqm::CoincidencePattern& p) {
  std::vector<double> a1(p.n1), a2(p.n2);
  py::array_t<double> values({static_cast<py::ssize_t>(p.n1), static_cast<py::ssize_t>(p.n2)});
  auto v = values.mutable_unchecked<2>();
  for (std::size_t i = 0; i < p.n1; ++i) {
    for (std::size_t j = 0; j < p.n2; ++j) {
      const auto& pt = p.grid[i * p.n2 + j];
      a1[i] = pt.axis1;
      a2[j] = pt.axis2;
      v(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = pt.value;
    }
  }
  py::dict d;
  d["axis1"] = column(a1);
  d["axis2"] = column(a2);
  d["values"] = values;
  d["axis_kind"] = sqm::to_string(p.axis_kind);
  d["normalization"] = p.normalization;
  return d;
}

analysis::FitModel make_model(const std::string& kind, const std::vector<double>& shape,
                              bool with_offset) {
  if (kind == "sqm") return analysis::FitModel::sqm(shape, with_offset);
  if (kind == "constant") return analysis::FitModel::constant();
  if (kind == "linear") return analysis::FitModel::linear();
  throw ConfigError("unknown model " + kind);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-photon double-slit pattern, Bohmian ensembles and counting analysis";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto num = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<NodeProximity>(m, "NodeProximity", num.ptr());
  py::register_exception<StepUnderflow>(m, "StepUnderflow", num.ptr());
  py::register_exception<ZeroSingles>(m, "ZeroSingles", num.ptr());
  py::register_exception<SingularFit>(m, "SingularFit", num.ptr());

  // geometry
  py::class_<ApparatusConfig>(m, "ApparatusConfig")
      .def(py::init<>())
      .def_readwrite("wavelength", &ApparatusConfig::wavelength)
      .def_readwrite("pump_wavelength", &ApparatusConfig::pump_wavelength)
      .def_readwrite("slit_width_w", &ApparatusConfig::slit_width_w)
      .def_readwrite("slit_separation_s", &ApparatusConfig::slit_separation_s)
      .def_readwrite("incidence_angle_A", &ApparatusConfig::incidence_angle_A)
      .def_readwrite("incidence_angle_B", &ApparatusConfig::incidence_angle_B)
      .def_readwrite("detector1_distance_L1", &ApparatusConfig::detector1_distance_L1)
      .def_readwrite("detector2_distance_L2", &ApparatusConfig::detector2_distance_L2)
      .def_readwrite("iris_diameter", &ApparatusConfig::iris_diameter)
      .def_readwrite("filter_fwhm", &ApparatusConfig::filter_fwhm)
      .def_readwrite("angular_dispersion", &ApparatusConfig::angular_dispersion)
      .def("validate", &ApparatusConfig::validate)
      .def("detector_distance", &ApparatusConfig::detector_distance);
  m.def("paper_defaults", &paper_defaults);
  m.def("position_to_angle",
        [](const ApparatusConfig& cfg, double y, int which) {
          return position_to_angle(cfg, {y, which});
        },
        py::arg("cfg"), py::arg("y"), py::arg("which"));
  m.def("angle_to_position",
        [](const ApparatusConfig& cfg, double theta, int which) {
          return angle_to_position(cfg, theta, which).y;
        },
        py::arg("cfg"), py::arg("theta"), py::arg("which"));
  m.def("fringe_period_sin", &fringe_period_sin);

  // coincidence pattern
  py::enum_<sqm::DispersionCoupling>(m, "DispersionCoupling")
      .value("Anticorrelated", sqm::DispersionCoupling::Anticorrelated)
      .value("Correlated", sqm::DispersionCoupling::Correlated);
  py::class_<sqm::SmearingSpec>(m, "SmearingSpec")
      .def(py::init<>())
      .def_readwrite("filter_fwhm", &sqm::SmearingSpec::filter_fwhm)
      .def_readwrite("angular_dispersion", &sqm::SmearingSpec::angular_dispersion)
      .def_readwrite("quadrature_points", &sqm::SmearingSpec::quadrature_points)
      .def_readwrite("coupling", &sqm::SmearingSpec::coupling)
      .def_static("from_config", &sqm::SmearingSpec::from_config, py::arg("cfg"),
                  py::arg("quadrature_points") = 21)
      .def_static("none", &sqm::SmearingSpec::none);
  m.def("coincidence_value", &sqm::coincidence_value, py::arg("cfg"), py::arg("theta1"),
        py::arg("theta2"));
  m.def("smeared_coincidence", &sqm::smeared_coincidence, py::arg("cfg"), py::arg("spec"),
        py::arg("theta1"), py::arg("theta2"));
  m.def("aperture_averaged_coincidence", &sqm::aperture_averaged_coincidence, py::arg("cfg"),
        py::arg("spec"), py::arg("y1"), py::arg("y2"), py::arg("aperture1"),
        py::arg("aperture2") = 0.0);
  m.def(
      "pattern_grid",
      [](const ApparatusConfig& cfg, const sqm::SmearingSpec& spec,
         std::tuple<double, double, double> a1, std::tuple<double, double, double> a2,
         const std::string& kind, std::optional<double> scale) {
        const auto ak = kind == "angle" ? sqm::AxisKind::Angle : sqm::AxisKind::Position;
        if (kind != "angle" && kind != "position") throw ConfigError("kind must be angle or position");
        const sqm::AxisRange r1{std::get<0>(a1), std::get<1>(a1), std::get<2>(a1)};
        const sqm::AxisRange r2{std::get<0>(a2), std::get<1>(a2), std::get<2>(a2)};
        return pattern_dict(sqm::pattern_grid(cfg, spec, r1, r2, ak, scale));
      },
      py::arg("cfg"), py::arg("spec"), py::arg("axis1"), py::arg("axis2"),
      py::arg("kind") = "angle", py::arg("scale") = py::none(),
      "Grid over inclusive (start, stop, step) ranges; returns axis1, axis2, values.");
  m.def("same_semiplane_fraction", &sqm::same_semiplane_fraction, py::arg("cfg"), py::arg("spec"),
        py::arg("theta2"), py::arg("theta1_limit") = 0.2, py::arg("intervals") = 4000);
  m.def("same_quadrant_probability", &sqm::same_quadrant_probability, py::arg("cfg"),
        py::arg("spec"), py::arg("limit") = 0.2, py::arg("intervals") = 400);

  // Bohmian dynamics
  py::enum_<dbb::CenterOfMassMode>(m, "CenterOfMassMode")
      .value("Anticorrelated", dbb::CenterOfMassMode::Anticorrelated)
      .value("Free", dbb::CenterOfMassMode::Free);
  py::enum_<dbb::InitialSampling>(m, "InitialSampling")
      .value("BornRule", dbb::InitialSampling::BornRule)
      .value("Antisymmetric", dbb::InitialSampling::Antisymmetric);
  py::class_<dbb::TwoPhotonWave>(m, "TwoPhotonWave")
      .def(py::init<>())
      .def_readwrite("slit_center_A", &dbb::TwoPhotonWave::slit_center_A)
      .def_readwrite("slit_center_B", &dbb::TwoPhotonWave::slit_center_B)
      .def_readwrite("waist", &dbb::TwoPhotonWave::waist)
      .def_readwrite("kick_A", &dbb::TwoPhotonWave::kick_A)
      .def_readwrite("kick_B", &dbb::TwoPhotonWave::kick_B)
      .def_readwrite("k", &dbb::TwoPhotonWave::k)
      .def_readwrite("symmetrized", &dbb::TwoPhotonWave::symmetrized)
      .def_readwrite("cm_mode", &dbb::TwoPhotonWave::cm_mode)
      .def_static("from_config", &dbb::TwoPhotonWave::from_config, py::arg("cfg"),
                  py::arg("waist") = py::none(),
                  py::arg("mode") = dbb::CenterOfMassMode::Anticorrelated);
  m.def("wave_value", &dbb::wave_value, py::arg("wave"), py::arg("y1"), py::arg("y2"),
        py::arg("z"));
  m.def(
      "bohm_velocity",
      [](const dbb::TwoPhotonWave& w, double y1, double y2, double z) {
        const auto v = dbb::bohm_velocity(w, y1, y2, z);
        return std::make_pair(v.v1, v.v2);
      },
      py::arg("wave"), py::arg("y1"), py::arg("y2"), py::arg("z"));
  m.def(
      "integrate_pair",
      [](const dbb::TwoPhotonWave& w, double y1, double y2, double z_max, double rtol) {
        dbb::IntegratorOptions opt;
        opt.rtol = rtol;
        opt.record_path = true;
        const auto p = dbb::integrate_pair(w, y1, y2, z_max, opt);
        std::vector<double> z, a, b;
        for (const auto& s : p.samples) {
          z.push_back(s.z);
          a.push_back(s.y1);
          b.push_back(s.y2);
        }
        py::dict d;
        d["z"] = column(z);
        d["y1"] = column(a);
        d["y2"] = column(b);
        d["valid"] = p.valid;
        d["failure"] = p.failure;
        d["same_semiplane"] = p.same_semiplane();
        d["max_sum_drift"] = p.max_sum_drift;
        return d;
      },
      py::arg("wave"), py::arg("y1_0"), py::arg("y2_0"), py::arg("z_max"),
      py::arg("rtol") = 1e-8);
  m.def(
      "run_ensemble",
      [](const dbb::TwoPhotonWave& w, std::size_t n, dbb::InitialSampling sampling,
         std::uint64_t seed, double z_max, double rtol) {
        dbb::IntegratorOptions opt;
        opt.rtol = rtol;
        dbb::TrajectoryEnsemble e;
        {
          py::gil_scoped_release release;
          e = dbb::run_ensemble(w, n, sampling, seed, z_max, opt);
        }
        std::vector<double> y10, y20, y1, y2;
        for (const auto& p : e.pairs) {
          y10.push_back(p.y1_0);
          y20.push_back(p.y2_0);
          y1.push_back(p.y1_det);
          y2.push_back(p.y2_det);
        }
        py::dict d;
        d["y1_0"] = column(y10);
        d["y2_0"] = column(y20);
        d["y1_det"] = column(y1);
        d["y2_det"] = column(y2);
        d["same_semiplane"] = e.same_semiplane;
        d["opposite_semiplane"] = e.opposite_semiplane;
        d["excluded"] = e.excluded;
        d["max_sum_drift"] = e.max_sum_drift;
        return d;
      },
      py::arg("wave"), py::arg("n_pairs"), py::arg("sampling"), py::arg("seed"),
      py::arg("z_max"), py::arg("rtol") = 1e-8);

  // counting simulation
  py::enum_<events::DriftModel::Kind>(m, "DriftKind")
      .value("NoDrift", events::DriftModel::Kind::None)
      .value("Linear", events::DriftModel::Kind::Linear)
      .value("Exponential", events::DriftModel::Kind::Exponential);
  py::class_<events::DriftModel>(m, "DriftModel")
      .def(py::init<>())
      .def(py::init([](events::DriftModel::Kind k, double r) { return events::DriftModel{k, r}; }),
           py::arg("kind"), py::arg("rate_per_day"))
      .def_readwrite("kind", &events::DriftModel::kind)
      .def_readwrite("rate_per_day", &events::DriftModel::rate_per_day)
      .def("factor", &events::DriftModel::factor);
  py::class_<events::RunSpec>(m, "RunSpec")
      .def(py::init<>())
      .def_readwrite("duration", &events::RunSpec::duration)
      .def_readwrite("n_acquisitions", &events::RunSpec::n_acquisitions)
      .def_readwrite("fixed_detector", &events::RunSpec::fixed_detector)
      .def_readwrite("fixed_position", &events::RunSpec::fixed_position)
      .def_readwrite("mobile_positions", &events::RunSpec::mobile_positions)
      .def_readwrite("rate_scale", &events::RunSpec::rate_scale)
      .def_readwrite("singles_rate_fixed", &events::RunSpec::singles_rate_fixed)
      .def_readwrite("singles_rate_mobile", &events::RunSpec::singles_rate_mobile)
      .def_readwrite("efficiency_fixed", &events::RunSpec::efficiency_fixed)
      .def_readwrite("efficiency_mobile", &events::RunSpec::efficiency_mobile)
      .def_readwrite("tac_window", &events::RunSpec::tac_window)
      .def_readwrite("background_shift", &events::RunSpec::background_shift)
      .def_readwrite("drift", &events::RunSpec::drift)
      .def("validate", &events::RunSpec::validate);
  py::class_<events::PatternSource>(m, "PatternSource")
      .def(py::init([](std::string name, std::function<double(double, double)> f) {
             return events::PatternSource{std::move(name), std::move(f)};
           }),
           py::arg("name"), py::arg("rate"))
      .def_readonly("name", &events::PatternSource::name)
      .def("__call__", [](const events::PatternSource& s, double y1, double y2) {
        return s.rate(y1, y2);
      });
  m.def("sqm_source", &events::sqm_source, py::arg("cfg"), py::arg("spec"),
        py::arg("mobile_aperture"), py::arg("mobile_detector") = 1);
  m.def("dbb_source", &events::dbb_source, py::arg("sqm"), py::arg("same_semiplane_weight"));
  py::class_<events::CountRecord>(m, "CountRecord")
      .def(py::init<>())
      .def_readwrite("acquisition", &events::CountRecord::acquisition)
      .def_readwrite("singles_fixed", &events::CountRecord::singles_fixed)
      .def_readwrite("singles_mobile", &events::CountRecord::singles_mobile)
      .def_readwrite("coincidences_raw", &events::CountRecord::coincidences_raw)
      .def_readwrite("accidentals", &events::CountRecord::accidentals)
      .def_readwrite("duration", &events::CountRecord::duration)
      .def_readwrite("mobile_position", &events::CountRecord::mobile_position)
      .def("__eq__", [](const events::CountRecord& a, const events::CountRecord& b) { return a == b; });
  m.def("simulate_run", &events::simulate_run, py::arg("cfg"), py::arg("run"), py::arg("source"),
        py::arg("seed"), py::arg("run_id") = 0);
  m.def("calibrate_rate_scale", &events::calibrate_rate_scale, py::arg("run"), py::arg("source"),
        py::arg("net_per_acquisition"));
  m.def("same_semiplane_protocol", &events::same_semiplane_protocol, py::arg("cfg"),
        py::arg("sqm"), py::arg("net_per_acquisition") = 78.0);
  m.def("interference_scan_protocol", &events::interference_scan_protocol, py::arg("sqm"),
        py::arg("peak_net_per_acquisition") = 150.0);

  // analysis
  py::class_<analysis::NormalizedPoint>(m, "NormalizedPoint")
      .def(py::init<>())
      .def_readwrite("mobile_position", &analysis::NormalizedPoint::mobile_position)
      .def_readwrite("value", &analysis::NormalizedPoint::value)
      .def_readwrite("uncertainty", &analysis::NormalizedPoint::uncertainty)
      .def_readwrite("n_acquisitions", &analysis::NormalizedPoint::n_acquisitions)
      .def_readonly("floored", &analysis::NormalizedPoint::floored);
  py::class_<analysis::FitResult>(m, "FitResult")
      .def_readonly("model", &analysis::FitResult::model)
      .def_readonly("parameter_names", &analysis::FitResult::parameter_names)
      .def_readonly("parameters", &analysis::FitResult::parameters)
      .def_readonly("parameter_errors", &analysis::FitResult::parameter_errors)
      .def_readonly("chi2", &analysis::FitResult::chi2)
      .def_readonly("dof", &analysis::FitResult::dof)
      .def_readonly("reduced_chi2", &analysis::FitResult::reduced_chi2)
      .def_readonly("p_value", &analysis::FitResult::p_value);
  m.def(
      "subtract_background",
      [](const events::CountRecord& r) {
        const auto v = analysis::subtract_background(r);
        return std::make_pair(v.value, v.uncertainty);
      },
      py::arg("record"));
  m.def("normalize_series", &analysis::normalize_series, py::arg("records"),
        py::arg("singles_reference") = 0.0);
  m.def("normalize_by_position", &analysis::normalize_by_position, py::arg("records"));
  m.def(
      "fit_model",
      [](const std::vector<analysis::NormalizedPoint>& pts, const std::string& kind,
         const std::vector<double>& shape, bool with_offset) {
        return analysis::fit_model(pts, make_model(kind, shape, with_offset));
      },
      py::arg("points"), py::arg("model"), py::arg("shape") = std::vector<double>{},
      py::arg("with_offset") = false);
  m.def("sqm_shape", &analysis::sqm_shape, py::arg("cfg"), py::arg("spec"), py::arg("points"),
        py::arg("fixed_position"), py::arg("fixed_detector"), py::arg("mobile_aperture"));
  m.def("chi2_p_value", &analysis::chi2_p_value, py::arg("chi2"), py::arg("dof"));
  m.def("null_significance", &analysis::null_significance, py::arg("net"), py::arg("uncertainty"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");
}
