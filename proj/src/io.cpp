#include "biphoton/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "biphoton/error.hpp"

namespace biphoton::io {

using nlohmann::json;

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

sqm::SmearingSpec Settings::smearing() const {
  if (!smearing_enabled) return sqm::SmearingSpec::none();
  auto spec = sqm::SmearingSpec::from_config(apparatus, quadrature_points);
  spec.coupling = coupling;
  return spec;
}

double Settings::mobile_aperture() const {
  return simulation.mobile_aperture < 0.0 ? apparatus.iris_diameter : simulation.mobile_aperture;
}

void Settings::validate() const {
  apparatus.validate();
  smearing().validate();
  simulation.run.validate();
  if (simulation.source != "sqm" && simulation.source != "dbb") {
    throw ConfigError("simulation.source must be sqm or dbb");
  }
  if (simulation.dbb_same_semiplane_weight < 0.0) {
    throw ConfigError("simulation.dbb_same_semiplane_weight must be >= 0");
  }
  if (section.fixed_detector != 1 && section.fixed_detector != 2) {
    throw ConfigError("section.fixed_detector must be 1 or 2");
  }
  if (section.aperture < 0.0) throw ConfigError("section.aperture must be >= 0");
  if (ensemble.n_pairs == 0) throw ConfigError("ensemble.n_pairs must be > 0");
  if (!(ensemble.rtol > 0.0)) throw ConfigError("ensemble.rtol must be > 0");
  if (ensemble.waist < 0.0) throw ConfigError("ensemble.waist must be >= 0");
}

namespace {

json range_json(const sqm::AxisRange& r) {
  return {{"start", r.start}, {"stop", r.stop}, {"step", r.step}};
}

const char* drift_name(events::DriftModel::Kind k) {
  switch (k) {
    case events::DriftModel::Kind::None:
      return "none";
    case events::DriftModel::Kind::Linear:
      return "linear";
    case events::DriftModel::Kind::Exponential:
      return "exponential";
  }
  return "none";
}

// Reads keys out of one JSON object and complains about anything left over.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(label() + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + label() + it.key());
    }
  }

  std::string label() const { return where_.empty() ? "" : where_ + "."; }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_range(const json& j, const std::string& where, sqm::AxisRange& r) {
  ObjectReader rd(j, where);
  rd.get("start", r.start);
  rd.get("stop", r.stop);
  rd.get("step", r.step);
  rd.finish();
}

template <class E>
E parse_enum(const std::string& value, const std::map<std::string, E>& names,
             const std::string& key) {
  auto it = names.find(value);
  if (it == names.end()) throw ConfigError("invalid value '" + value + "' for " + key);
  return it->second;
}

}  // namespace

json to_json(const Settings& s) {
  const auto& a = s.apparatus;
  const auto& r = s.simulation.run;
  json j;
  j["wavelength"] = a.wavelength;
  j["pump_wavelength"] = a.pump_wavelength;
  j["slit_width_w"] = a.slit_width_w;
  j["slit_separation_s"] = a.slit_separation_s;
  j["incidence_angle_A"] = a.incidence_angle_A;
  j["incidence_angle_B"] = a.incidence_angle_B;
  j["detector1_distance_L1"] = a.detector1_distance_L1;
  j["detector2_distance_L2"] = a.detector2_distance_L2;
  j["iris_diameter"] = a.iris_diameter;
  j["filter_fwhm"] = a.filter_fwhm;
  j["angular_dispersion"] = a.angular_dispersion;
  j["seed"] = s.seed;
  j["smearing"] = {{"enabled", s.smearing_enabled},
                   {"quadrature_points", s.quadrature_points},
                   {"coupling", sqm::to_string(s.coupling)}};
  j["grid"] = {{"kind", sqm::to_string(s.grid.kind)},
               {"axis1", range_json(s.grid.axis1)},
               {"axis2", range_json(s.grid.axis2)}};
  j["section"] = {{"fixed_detector", s.section.fixed_detector},
                  {"fixed_position", s.section.fixed_position},
                  {"mobile", range_json(s.section.mobile)},
                  {"aperture", s.section.aperture}};
  j["ensemble"] = {{"n_pairs", s.ensemble.n_pairs},
                   {"sampling", dbb::to_string(s.ensemble.sampling)},
                   {"cm_mode", dbb::to_string(s.ensemble.cm_mode)},
                   {"waist", s.ensemble.waist},
                   {"rtol", s.ensemble.rtol},
                   {"n_paths", s.ensemble.n_paths}};
  j["simulation"] = {{"duration", r.duration},
                     {"n_acquisitions", r.n_acquisitions},
                     {"fixed_detector", r.fixed_detector},
                     {"fixed_position", r.fixed_position},
                     {"mobile_positions", r.mobile_positions},
                     {"rate_scale", r.rate_scale},
                     {"singles_rate_fixed", r.singles_rate_fixed},
                     {"singles_rate_mobile", r.singles_rate_mobile},
                     {"efficiency_fixed", r.efficiency_fixed},
                     {"efficiency_mobile", r.efficiency_mobile},
                     {"tac_window", r.tac_window},
                     {"background_shift", r.background_shift},
                     {"drift", {{"kind", drift_name(r.drift.kind)},
                                {"rate_per_day", r.drift.rate_per_day}}},
                     {"source", s.simulation.source},
                     {"dbb_same_semiplane_weight", s.simulation.dbb_same_semiplane_weight},
                     {"mobile_aperture", s.simulation.mobile_aperture},
                     {"net_target", s.simulation.net_target},
                     {"fit_offset", s.simulation.fit_offset}};
  return j;
}

Settings settings_from_json(const json& j, Settings s) {
  ObjectReader top(j, "");
  auto& a = s.apparatus;
  top.get("wavelength", a.wavelength);
  top.get("pump_wavelength", a.pump_wavelength);
  top.get("slit_width_w", a.slit_width_w);
  top.get("slit_separation_s", a.slit_separation_s);
  top.get("incidence_angle_A", a.incidence_angle_A);
  top.get("incidence_angle_B", a.incidence_angle_B);
  if (j.contains("incidence_angle_A_deg")) {
    double deg = 0.0;
    top.get("incidence_angle_A_deg", deg);
    a.incidence_angle_A = deg_to_rad(deg);
  }
  if (j.contains("incidence_angle_B_deg")) {
    double deg = 0.0;
    top.get("incidence_angle_B_deg", deg);
    a.incidence_angle_B = deg_to_rad(deg);
  }
  top.get("detector1_distance_L1", a.detector1_distance_L1);
  top.get("detector2_distance_L2", a.detector2_distance_L2);
  top.get("iris_diameter", a.iris_diameter);
  top.get("filter_fwhm", a.filter_fwhm);
  top.get("angular_dispersion", a.angular_dispersion);
  top.get("seed", s.seed);

  if (const json* sm = top.child("smearing")) {
    ObjectReader rd(*sm, "smearing");
    rd.get("enabled", s.smearing_enabled);
    rd.get("quadrature_points", s.quadrature_points);
    std::string coupling = sqm::to_string(s.coupling);
    rd.get("coupling", coupling);
    s.coupling = parse_enum<sqm::DispersionCoupling>(
        coupling,
        {{"anticorrelated", sqm::DispersionCoupling::Anticorrelated},
         {"correlated", sqm::DispersionCoupling::Correlated}},
        "smearing.coupling");
    rd.finish();
  }
  if (const json* g = top.child("grid")) {
    ObjectReader rd(*g, "grid");
    std::string kind = sqm::to_string(s.grid.kind);
    rd.get("kind", kind);
    s.grid.kind = parse_enum<sqm::AxisKind>(
        kind, {{"angle", sqm::AxisKind::Angle}, {"position", sqm::AxisKind::Position}},
        "grid.kind");
    if (const json* r = rd.child("axis1")) read_range(*r, "grid.axis1", s.grid.axis1);
    if (const json* r = rd.child("axis2")) read_range(*r, "grid.axis2", s.grid.axis2);
    rd.finish();
  }
  if (const json* sec = top.child("section")) {
    ObjectReader rd(*sec, "section");
    rd.get("fixed_detector", s.section.fixed_detector);
    rd.get("fixed_position", s.section.fixed_position);
    if (const json* r = rd.child("mobile")) read_range(*r, "section.mobile", s.section.mobile);
    rd.get("aperture", s.section.aperture);
    rd.finish();
  }
  if (const json* en = top.child("ensemble")) {
    ObjectReader rd(*en, "ensemble");
    rd.get("n_pairs", s.ensemble.n_pairs);
    std::string sampling = dbb::to_string(s.ensemble.sampling);
    rd.get("sampling", sampling);
    s.ensemble.sampling = parse_enum<dbb::InitialSampling>(
        sampling,
        {{"born", dbb::InitialSampling::BornRule},
         {"antisymmetric", dbb::InitialSampling::Antisymmetric}},
        "ensemble.sampling");
    std::string mode = dbb::to_string(s.ensemble.cm_mode);
    rd.get("cm_mode", mode);
    s.ensemble.cm_mode = parse_enum<dbb::CenterOfMassMode>(
        mode,
        {{"anticorrelated", dbb::CenterOfMassMode::Anticorrelated},
         {"free", dbb::CenterOfMassMode::Free}},
        "ensemble.cm_mode");
    rd.get("waist", s.ensemble.waist);
    rd.get("rtol", s.ensemble.rtol);
    rd.get("n_paths", s.ensemble.n_paths);
    rd.finish();
  }
  if (const json* sim = top.child("simulation")) {
    ObjectReader rd(*sim, "simulation");
    auto& r = s.simulation.run;
    rd.get("duration", r.duration);
    rd.get("n_acquisitions", r.n_acquisitions);
    rd.get("fixed_detector", r.fixed_detector);
    rd.get("fixed_position", r.fixed_position);
    rd.get("mobile_positions", r.mobile_positions);
    rd.get("rate_scale", r.rate_scale);
    rd.get("singles_rate_fixed", r.singles_rate_fixed);
    rd.get("singles_rate_mobile", r.singles_rate_mobile);
    rd.get("efficiency_fixed", r.efficiency_fixed);
    rd.get("efficiency_mobile", r.efficiency_mobile);
    rd.get("tac_window", r.tac_window);
    rd.get("background_shift", r.background_shift);
    if (const json* d = rd.child("drift")) {
      ObjectReader dr(*d, "simulation.drift");
      std::string kind = drift_name(r.drift.kind);
      dr.get("kind", kind);
      r.drift.kind = parse_enum<events::DriftModel::Kind>(
          kind,
          {{"none", events::DriftModel::Kind::None},
           {"linear", events::DriftModel::Kind::Linear},
           {"exponential", events::DriftModel::Kind::Exponential}},
          "simulation.drift.kind");
      dr.get("rate_per_day", r.drift.rate_per_day);
      dr.finish();
    }
    rd.get("source", s.simulation.source);
    rd.get("dbb_same_semiplane_weight", s.simulation.dbb_same_semiplane_weight);
    rd.get("mobile_aperture", s.simulation.mobile_aperture);
    rd.get("net_target", s.simulation.net_target);
    rd.get("fit_offset", s.simulation.fit_offset);
    rd.finish();
  }
  top.finish();
  s.validate();
  return s;
}

Settings load_settings(const std::string& path, Settings base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return settings_from_json(j, base);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("empty component in override key " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override key " + key + " walks into a value");
    node = &next;
    start = dot + 1;
  }
}

void write_pattern_csv(std::ostream& os, const sqm::CoincidencePattern& pattern) {
  const bool angle = pattern.axis_kind == sqm::AxisKind::Angle;
  os << "# pattern v" << kFormatVersion << "\n";
  os << (angle ? "theta1,theta2,value\n" : "y1,y2,value\n");
  for (const auto& p : pattern.grid) {
    os << format_double(p.axis1) << ',' << format_double(p.axis2) << ','
       << format_double(p.value) << '\n';
  }
}

json pattern_metadata(const sqm::CoincidencePattern& pattern) {
  Settings s;
  s.apparatus = pattern.config;
  const json cfg = to_json(s);
  json apparatus;
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    if (!it->is_object() && it.key() != "seed") apparatus[it.key()] = *it;
  }
  return {{"format", std::string("pattern v") + kFormatVersion},
          {"axis_kind", sqm::to_string(pattern.axis_kind)},
          {"n1", pattern.n1},
          {"n2", pattern.n2},
          {"normalization", pattern.normalization},
          {"normalized_to_max", pattern.normalized_to_max},
          {"smearing",
           {{"filter_fwhm", pattern.smearing.filter_fwhm},
            {"angular_dispersion", pattern.smearing.angular_dispersion},
            {"quadrature_points", pattern.smearing.quadrature_points},
            {"coupling", sqm::to_string(pattern.smearing.coupling)}}},
          {"config", apparatus}};
}

json pattern_json(const sqm::CoincidencePattern& pattern) {
  json j = pattern_metadata(pattern);
  json grid = json::array();
  for (const auto& p : pattern.grid) grid.push_back({p.axis1, p.axis2, p.value});
  j["grid"] = std::move(grid);
  return j;
}

void write_ensemble_csv(std::ostream& os, const dbb::TrajectoryEnsemble& ensemble) {
  os << "# ensemble v" << kFormatVersion << "\n";
  os << "pair_id,y1_0,y2_0,y1_det,y2_det,same_semiplane,excluded\n";
  for (const auto& p : ensemble.pairs) {
    os << p.id << ',' << format_double(p.y1_0) << ',' << format_double(p.y2_0) << ','
       << format_double(p.y1_det) << ',' << format_double(p.y2_det) << ','
       << (p.same_semiplane ? 1 : 0) << ',' << (p.excluded ? 1 : 0) << '\n';
  }
}

json ensemble_summary(const dbb::TrajectoryEnsemble& ensemble, const dbb::TwoPhotonWave& wave) {
  return {{"format", std::string("ensemble-summary v") + kFormatVersion},
          {"n_pairs", ensemble.size()},
          {"seed", ensemble.seed},
          {"sampling", dbb::to_string(ensemble.sampling)},
          {"cm_mode", dbb::to_string(wave.cm_mode)},
          {"waist", wave.waist},
          {"same_semiplane", ensemble.same_semiplane},
          {"opposite_semiplane", ensemble.opposite_semiplane},
          {"excluded", ensemble.excluded},
          {"same_fraction", ensemble.same_fraction()},
          {"max_sum_drift", ensemble.max_sum_drift}};
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T parse_field(const std::string& text, const std::string& column) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("bad value '" + text + "' in column " + column);
  }
  return value;
}

// Skips comment lines and checks the header; returns the data rows.
std::vector<std::vector<std::string>> read_table(std::istream& is,
                                                 const std::vector<std::string>& header) {
  std::string line;
  bool have_header = false;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv(line);
    if (!have_header) {
      if (fields != header) throw ConfigError("unexpected CSV header: " + line);
      have_header = true;
      continue;
    }
    if (fields.size() != header.size()) throw ConfigError("wrong number of fields: " + line);
    rows.push_back(std::move(fields));
  }
  if (!have_header) throw ConfigError("CSV input has no header");
  return rows;
}

const std::vector<std::string> kCountColumns = {
    "acquisition",      "singles_fixed", "singles_mobile", "coincidences_raw",
    "accidentals",      "duration",      "mobile_position"};

}  // namespace

std::vector<dbb::PairOutcome> read_ensemble_csv(std::istream& is) {
  const std::vector<std::string> header = {"pair_id", "y1_0",          "y2_0",    "y1_det",
                                           "y2_det",  "same_semiplane", "excluded"};
  std::vector<dbb::PairOutcome> out;
  for (const auto& f : read_table(is, header)) {
    dbb::PairOutcome p;
    p.id = parse_field<std::size_t>(f[0], header[0]);
    p.y1_0 = parse_field<double>(f[1], header[1]);
    p.y2_0 = parse_field<double>(f[2], header[2]);
    p.y1_det = parse_field<double>(f[3], header[3]);
    p.y2_det = parse_field<double>(f[4], header[4]);
    p.same_semiplane = parse_field<int>(f[5], header[5]) != 0;
    p.excluded = parse_field<int>(f[6], header[6]) != 0;
    out.push_back(p);
  }
  if (out.empty()) throw ConfigError("ensemble file has no pairs");
  return out;
}

void write_counts_csv(std::ostream& os, const std::vector<events::CountRecord>& records) {
  os << "# counts v" << kFormatVersion << "\n";
  for (std::size_t i = 0; i < kCountColumns.size(); ++i) {
    os << (i ? "," : "") << kCountColumns[i];
  }
  os << '\n';
  for (const auto& r : records) {
    os << r.acquisition << ',' << r.singles_fixed << ',' << r.singles_mobile << ','
       << r.coincidences_raw << ',' << r.accidentals << ',' << format_double(r.duration) << ','
       << format_double(r.mobile_position) << '\n';
  }
}

static void check_record(const events::CountRecord& r) {
  if (r.singles_fixed < 0 || r.singles_mobile < 0 || r.coincidences_raw < 0 || r.accidentals < 0) {
    throw ConfigError("negative count in acquisition " + std::to_string(r.acquisition));
  }
  if (!(r.duration > 0.0)) {
    throw ConfigError("duration must be > 0 in acquisition " + std::to_string(r.acquisition));
  }
}

std::vector<events::CountRecord> read_counts_csv(std::istream& is) {
  std::vector<events::CountRecord> out;
  for (const auto& f : read_table(is, kCountColumns)) {
    events::CountRecord r;
    r.acquisition = parse_field<int>(f[0], kCountColumns[0]);
    r.singles_fixed = parse_field<std::int64_t>(f[1], kCountColumns[1]);
    r.singles_mobile = parse_field<std::int64_t>(f[2], kCountColumns[2]);
    r.coincidences_raw = parse_field<std::int64_t>(f[3], kCountColumns[3]);
    r.accidentals = parse_field<std::int64_t>(f[4], kCountColumns[4]);
    r.duration = parse_field<double>(f[5], kCountColumns[5]);
    r.mobile_position = parse_field<double>(f[6], kCountColumns[6]);
    check_record(r);
    out.push_back(r);
  }
  if (out.empty()) throw ConfigError("counts file has no records");
  return out;
}

json counts_json(const std::vector<events::CountRecord>& records) {
  json rows = json::array();
  for (const auto& r : records) {
    rows.push_back({{"acquisition", r.acquisition},
                    {"singles_fixed", r.singles_fixed},
                    {"singles_mobile", r.singles_mobile},
                    {"coincidences_raw", r.coincidences_raw},
                    {"accidentals", r.accidentals},
                    {"duration", r.duration},
                    {"mobile_position", r.mobile_position}});
  }
  return {{"format", std::string("counts v") + kFormatVersion}, {"records", rows}};
}

std::vector<events::CountRecord> counts_from_json(const json& j) {
  std::vector<events::CountRecord> out;
  try {
    for (const auto& row : j.at("records")) {
      events::CountRecord r;
      r.acquisition = row.at("acquisition").get<int>();
      r.singles_fixed = row.at("singles_fixed").get<std::int64_t>();
      r.singles_mobile = row.at("singles_mobile").get<std::int64_t>();
      r.coincidences_raw = row.at("coincidences_raw").get<std::int64_t>();
      r.accidentals = row.at("accidentals").get<std::int64_t>();
      r.duration = row.at("duration").get<double>();
      r.mobile_position = row.at("mobile_position").get<double>();
      check_record(r);
      out.push_back(r);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("counts JSON: ") + e.what());
  }
  if (out.empty()) throw ConfigError("counts file has no records");
  return out;
}

void write_points_csv(std::ostream& os, const std::vector<analysis::NormalizedPoint>& points) {
  os << "# points v" << kFormatVersion << "\n";
  os << "mobile_position,value,uncertainty,n_acquisitions,raw_total,accidentals_total,"
        "singles_fixed_total,floored\n";
  for (const auto& p : points) {
    os << format_double(p.mobile_position) << ',' << format_double(p.value) << ','
       << format_double(p.uncertainty) << ',' << p.n_acquisitions << ',' << p.raw_total << ','
       << p.accidentals_total << ',' << p.singles_fixed_total << ',' << (p.floored ? 1 : 0)
       << '\n';
  }
}

json points_json(const std::vector<analysis::NormalizedPoint>& points) {
  json rows = json::array();
  for (const auto& p : points) {
    rows.push_back({{"mobile_position", p.mobile_position},
                    {"value", p.value},
                    {"uncertainty", p.uncertainty},
                    {"n_acquisitions", p.n_acquisitions},
                    {"raw_total", p.raw_total},
                    {"accidentals_total", p.accidentals_total},
                    {"singles_fixed_total", p.singles_fixed_total},
                    {"floored", p.floored}});
  }
  return {{"format", std::string("points v") + kFormatVersion}, {"points", rows}};
}

json fit_json(const analysis::FitResult& fit) {
  json params = json::object();
  json errors = json::object();
  for (std::size_t i = 0; i < fit.parameters.size(); ++i) {
    params[fit.parameter_names[i]] = fit.parameters[i];
    errors[fit.parameter_names[i]] = fit.parameter_errors[i];
  }
  return {{"model", fit.model},
          {"parameters", params},
          {"parameter_errors", errors},
          {"chi2", fit.chi2},
          {"dof", fit.dof},
          {"reduced_chi2", fit.reduced_chi2},
          {"p_value", fit.p_value}};
}

}  // namespace biphoton::io
