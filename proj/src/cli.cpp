#include "biphoton/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "biphoton/analysis.hpp"
#include "biphoton/dbb_dynamics.hpp"
#include "biphoton/error.hpp"
#include "biphoton/event_sim.hpp"
#include "biphoton/io.hpp"
#include "biphoton/sqm_pattern.hpp"

#ifndef BIPHOTON_VERSION
#define BIPHOTON_VERSION "0.0.0"
#endif

namespace biphoton::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  bool paper_defaults = false;
  std::string out_dir = "run";
  std::string format = "csv";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string counts_path;  // analyze
  std::string in_dir;       // report
};

class Run {
 public:
  Run(std::string subcommand, Options opt, std::ostream& out)
      : sub_(std::move(subcommand)), opt_(std::move(opt)), out_(out) {}

  void execute() {
    load();
    prepare_out_dir();
    if (sub_ == "predict") {
      predict();
    } else if (sub_ == "section") {
      section();
    } else if (sub_ == "trajectories") {
      trajectories();
    } else if (sub_ == "ensemble") {
      ensemble();
    } else if (sub_ == "simulate") {
      simulate();
    } else if (sub_ == "analyze") {
      analyze();
    } else if (sub_ == "report") {
      report();
      return;  // report writes nothing
    }
    write_manifest();
  }

 private:
  void load() {
    io::Settings base;
    if (opt_.paper_defaults) base.apparatus = paper_defaults();
    json j = io::to_json(base);
    if (!opt_.config_path.empty()) {
      std::ifstream in(opt_.config_path);
      if (!in) throw ConfigError("cannot open config file " + opt_.config_path);
      json file = json::parse(in, nullptr, false);
      if (file.is_discarded() || !file.is_object()) {
        throw ConfigError("config " + opt_.config_path + " is not a JSON object");
      }
      j.merge_patch(file);
    }
    for (const auto& o : opt_.overrides) io::apply_override(j, o);
    settings_ = io::settings_from_json(j);
    if (opt_.seed_given) settings_.seed = opt_.seed;
    if (opt_.format != "csv" && opt_.format != "json") {
      throw ConfigError("format must be csv or json");
    }
  }

  void prepare_out_dir() {
    if (sub_ == "report") return;
    std::error_code ec;
    fs::create_directories(opt_.out_dir, ec);
    if (ec || !fs::is_directory(opt_.out_dir)) {
      throw ConfigError("cannot create output directory " + opt_.out_dir);
    }
  }

  fs::path out_path(const std::string& name) const { return fs::path(opt_.out_dir) / name; }

  std::ofstream open_out(const std::string& name) {
    std::ofstream f(out_path(name), std::ios::binary);
    if (!f) throw ConfigError("cannot write " + out_path(name).string());
    outputs_.push_back(name);
    return f;
  }

  void write_json(const std::string& name, const json& j) {
    auto f = open_out(name);
    f << j.dump(2) << '\n';
  }

  void predict() {
    const auto pattern = sqm::pattern_grid(settings_.apparatus, settings_.smearing(),
                                           settings_.grid.axis1, settings_.grid.axis2,
                                           settings_.grid.kind);
    if (opt_.format == "json") {
      write_json("pattern.json", io::pattern_json(pattern));
    } else {
      auto f = open_out("pattern.csv");
      io::write_pattern_csv(f, pattern);
      write_json("pattern_meta.json", io::pattern_metadata(pattern));
    }
    const auto best = std::max_element(pattern.grid.begin(), pattern.grid.end(),
                                       [](auto& a, auto& b) { return a.value < b.value; });
    out_ << "predict: " << pattern.n1 << " x " << pattern.n2 << " grid, max at ("
         << best->axis1 << ", " << best->axis2 << ")\n";
  }

  void section() {
    const auto& sec = settings_.section;
    const auto& cfg = settings_.apparatus;
    const auto spec = settings_.smearing();
    const int mobile = sec.fixed_detector == 1 ? 2 : 1;
    const auto ys = sec.mobile.samples();
    std::vector<double> values(ys.size());
    double vmax = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double y1 = mobile == 1 ? ys[i] : sec.fixed_position;
      const double y2 = mobile == 1 ? sec.fixed_position : ys[i];
      values[i] = sqm::aperture_averaged_coincidence(cfg, spec, y1, y2,
                                                     mobile == 1 ? sec.aperture : 0.0,
                                                     mobile == 2 ? sec.aperture : 0.0);
      vmax = std::max(vmax, values[i]);
    }
    const double norm = vmax > 0.0 ? 1.0 / vmax : 1.0;
    json meta = {{"format", std::string("section v") + io::kFormatVersion},
                 {"fixed_detector", sec.fixed_detector},
                 {"fixed_position", sec.fixed_position},
                 {"aperture", sec.aperture},
                 {"normalization", norm},
                 {"n", ys.size()}};
    if (opt_.format == "json") {
      json rows = json::array();
      for (std::size_t i = 0; i < ys.size(); ++i) {
        rows.push_back({ys[i], position_to_angle(cfg, {ys[i], mobile}), values[i] * norm});
      }
      meta["columns"] = {"y_mobile", "theta_mobile", "value"};
      meta["rows"] = rows;
      write_json("section.json", meta);
    } else {
      auto f = open_out("section.csv");
      f << "# section v" << io::kFormatVersion << "\n" << "y_mobile,theta_mobile,value\n";
      for (std::size_t i = 0; i < ys.size(); ++i) {
        f << io::format_double(ys[i]) << ','
          << io::format_double(position_to_angle(cfg, {ys[i], mobile})) << ','
          << io::format_double(values[i] * norm) << '\n';
      }
      write_json("section_meta.json", meta);
    }
    out_ << "section: " << ys.size() << " points, detector " << sec.fixed_detector
         << " fixed at " << sec.fixed_position << " m\n";
  }

  dbb::TwoPhotonWave wave() const {
    const auto& e = settings_.ensemble;
    std::optional<double> waist;
    if (e.waist > 0.0) waist = e.waist;
    return dbb::TwoPhotonWave::from_config(settings_.apparatus, waist, e.cm_mode);
  }

  dbb::IntegratorOptions integrator() const {
    dbb::IntegratorOptions o;
    o.rtol = settings_.ensemble.rtol;
    o.detector1_plane = settings_.apparatus.detector1_distance_L1;
    o.detector2_plane = settings_.apparatus.detector2_distance_L2;
    return o;
  }

  double z_max() const {
    return std::max(settings_.apparatus.detector1_distance_L1,
                    settings_.apparatus.detector2_distance_L2);
  }

  void trajectories() {
    const auto w = wave();
    auto opts = integrator();
    opts.record_path = true;
    json paths = json::array();
    std::ostringstream csv;
    csv << "# trajectories v" << io::kFormatVersion << "\n" << "pair_id,z,y1,y2\n";
    std::size_t failed = 0;
    for (std::size_t i = 0; i < settings_.ensemble.n_paths; ++i) {
      const auto start = dbb::sample_initial(w, settings_.ensemble.sampling, settings_.seed, i);
      const auto pair = dbb::integrate_pair(w, start.y1, start.y2, z_max(), opts);
      if (!pair.valid) ++failed;
      json rows = json::array();
      for (const auto& s : pair.samples) {
        if (opt_.format == "json") {
          rows.push_back({s.z, s.y1, s.y2});
        } else {
          csv << i << ',' << io::format_double(s.z) << ',' << io::format_double(s.y1) << ','
              << io::format_double(s.y2) << '\n';
        }
      }
      if (opt_.format == "json") {
        paths.push_back({{"pair_id", i}, {"valid", pair.valid}, {"samples", rows}});
      }
    }
    if (opt_.format == "json") {
      write_json("trajectories.json",
                 {{"format", std::string("trajectories v") + io::kFormatVersion},
                  {"columns", {"z", "y1", "y2"}},
                  {"paths", paths}});
    } else {
      auto f = open_out("trajectories.csv");
      f << csv.str();
    }
    out_ << "trajectories: " << settings_.ensemble.n_paths << " pairs, " << failed
         << " stopped early\n";
  }

  void ensemble() {
    const auto w = wave();
    const auto ens = dbb::run_ensemble(w, settings_.ensemble.n_pairs, settings_.ensemble.sampling,
                                       settings_.seed, z_max(), integrator());
    if (opt_.format == "json") {
      json rows = json::array();
      for (const auto& p : ens.pairs) {
        rows.push_back({p.id, p.y1_0, p.y2_0, p.y1_det, p.y2_det, p.same_semiplane, p.excluded});
      }
      json j = io::ensemble_summary(ens, w);
      j["columns"] = {"pair_id", "y1_0", "y2_0", "y1_det", "y2_det", "same_semiplane",
                      "excluded"};
      j["pairs"] = rows;
      write_json("ensemble.json", j);
    } else {
      auto f = open_out("ensemble.csv");
      io::write_ensemble_csv(f, ens);
    }
    write_json("ensemble_summary.json", io::ensemble_summary(ens, w));
    out_ << "ensemble: " << ens.size() << " pairs, same-semiplane " << ens.same_semiplane
         << ", excluded " << ens.excluded << ", max |d(y1+y2)| " << ens.max_sum_drift << " m\n";
  }

  events::PatternSource source(const events::PatternSource& sqm) const {
    if (settings_.simulation.source == "dbb") {
      return events::dbb_source(sqm, settings_.simulation.dbb_same_semiplane_weight);
    }
    return sqm;
  }

  events::PatternSource sqm_source() const {
    const auto& run = settings_.simulation.run;
    return events::sqm_source(settings_.apparatus, settings_.smearing(),
                              settings_.mobile_aperture(), run.mobile_detector());
  }

  void simulate() {
    auto run = settings_.simulation.run;
    const auto sqm = sqm_source();
    if (settings_.simulation.net_target > 0.0) {
      run.rate_scale = events::calibrate_rate_scale(run, sqm, settings_.simulation.net_target);
    }
    const auto src = source(sqm);
    const auto records = events::simulate_run(settings_.apparatus, run, src, settings_.seed);
    if (opt_.format == "json") {
      write_json("counts.json", io::counts_json(records));
    } else {
      auto f = open_out("counts.csv");
      io::write_counts_csv(f, records);
    }
    const auto means = events::expected_counts(settings_.apparatus, run, src);
    json per_position = json::array();
    for (std::size_t i = 0; i < means.size(); i += static_cast<std::size_t>(run.n_acquisitions)) {
      per_position.push_back({{"mobile_position", means[i].mobile_position},
                              {"true_coincidences", means[i].true_coincidences},
                              {"accidentals", means[i].accidentals}});
    }
    write_json("simulate_meta.json",
               {{"format", std::string("simulate v") + io::kFormatVersion},
                {"source", src.name},
                {"rate_scale", run.rate_scale},
                {"n_records", records.size()},
                {"expected", per_position}});
    out_ << "simulate: " << records.size() << " acquisitions from the " << src.name
         << " source\n";
  }

  std::vector<events::CountRecord> read_counts() const {
    std::string path = opt_.counts_path;
    if (path.empty()) {
      path = fs::exists(out_path("counts.csv")) ? out_path("counts.csv").string()
                                                 : out_path("counts.json").string();
    }
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open counts file " + path);
    if (fs::path(path).extension() == ".json") {
      json j = json::parse(in, nullptr, false);
      if (j.is_discarded()) throw ConfigError("counts file " + path + " is not valid JSON");
      return io::counts_from_json(j);
    }
    return io::read_counts_csv(in);
  }

  void analyze() {
    const auto records = read_counts();
    const auto points = analysis::normalize_by_position(records);
    if (opt_.format == "json") {
      write_json("points.json", io::points_json(points));
    } else {
      auto f = open_out("points.csv");
      io::write_points_csv(f, points);
    }

    const auto& run = settings_.simulation.run;
    json fits = json::array();
    auto add_fit = [&](const analysis::FitModel& model) {
      const auto fit = analysis::fit_model(points, model);
      json j = io::fit_json(fit);
      j["rejected_at_5pct"] = fit.p_value < 0.05;
      fits.push_back(j);
      out_ << "  " << std::left << std::setw(12) << fit.model << " chi2 " << fit.chi2 << " / "
           << fit.dof << " dof (reduced " << fit.reduced_chi2 << "), p = " << fit.p_value
           << (fit.p_value < 0.05 ? "  rejected at 5%" : "") << '\n';
    };
    out_ << "analyze: " << points.size() << " positions from " << records.size()
         << " acquisitions\n";
    const std::size_t n_sqm = settings_.simulation.fit_offset ? 3 : 2;
    if (points.size() >= n_sqm) {
      const auto shape = analysis::sqm_shape(settings_.apparatus, settings_.smearing(), points,
                                             run.fixed_position, run.fixed_detector,
                                             settings_.mobile_aperture());
      add_fit(analysis::FitModel::sqm(shape, settings_.simulation.fit_offset));
    }
    if (points.size() >= 2) add_fit(analysis::FitModel::constant());
    if (points.size() >= 3) add_fit(analysis::FitModel::linear());

    json sig = json::array();
    for (const auto& p : points) {
      const double z = analysis::null_significance(p.value, p.uncertainty);
      sig.push_back({{"mobile_position", p.mobile_position},
                     {"net", p.value},
                     {"uncertainty", p.uncertainty},
                     {"z", z}});
      out_ << "  y = " << p.mobile_position << " m: net " << p.value << " +- " << p.uncertainty
           << " per acquisition, z = " << z << '\n';
    }
    write_json("fits.json", {{"format", std::string("fits v") + io::kFormatVersion},
                             {"fits", fits},
                             {"significance", sig}});
  }

  void report() {
    const fs::path dir = opt_.in_dir.empty() ? fs::path(opt_.out_dir) : fs::path(opt_.in_dir);
    const auto fits_file = dir / "fits.json";
    const auto ens_file = dir / "ensemble.csv";
    const auto ens_json = dir / "ensemble.json";
    bool any = false;
    if (fs::exists(fits_file)) {
      any = true;
      std::ifstream in(fits_file);
      json j = json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("fits")) {
        throw ConfigError(fits_file.string() + " is not a fits file");
      }
      out_ << "Fits (" << fits_file.string() << ")\n";
      if (j["fits"].empty()) {
        out_ << "  none (too few mobile positions)\n";
      } else {
        out_ << "  model        chi2      dof  reduced   p-value   5% test\n";
      }
      for (const auto& f : j["fits"]) {
        out_ << "  " << std::left << std::setw(12) << f["model"].get<std::string>() << std::right
             << std::setw(9) << std::setprecision(4) << f["chi2"].get<double>() << std::setw(6)
             << f["dof"].get<int>() << std::setw(9) << f["reduced_chi2"].get<double>()
             << std::setw(11) << f["p_value"].get<double>() << "   "
             << (f["rejected_at_5pct"].get<bool>() ? "rejected" : "accepted") << '\n';
      }
      out_ << "Significance\n";
      for (const auto& s : j["significance"]) {
        out_ << "  y = " << s["mobile_position"].get<double>() << " m: " << s["net"].get<double>()
             << " +- " << s["uncertainty"].get<double>() << "  z = " << s["z"].get<double>()
             << '\n';
      }
    }
    if (fs::exists(ens_file) || fs::exists(ens_json)) {
      any = true;
      std::vector<dbb::PairOutcome> pairs;
      if (fs::exists(ens_file)) {
        std::ifstream in(ens_file);
        pairs = io::read_ensemble_csv(in);
      } else {
        std::ifstream in(ens_json);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("pairs") || j["pairs"].empty()) {
          throw ConfigError(ens_json.string() + " has no pairs");
        }
        for (const auto& r : j["pairs"]) {
          dbb::PairOutcome p;
          p.same_semiplane = r.at(5).get<bool>();
          p.excluded = r.at(6).get<bool>();
          pairs.push_back(p);
        }
      }
      std::size_t same = 0, excluded = 0;
      for (const auto& p : pairs) {
        if (p.excluded) {
          ++excluded;
        } else if (p.same_semiplane) {
          ++same;
        }
      }
      const std::size_t valid = pairs.size() - excluded;
      const double frac = valid ? static_cast<double>(same) / static_cast<double>(valid) : 0.0;
      const auto& run = settings_.simulation.run;
      const double theta_fixed = position_to_angle(
          settings_.apparatus, {run.fixed_position, run.fixed_detector});
      const double sqm_frac =
          theta_fixed != 0.0
              ? sqm::same_semiplane_fraction(settings_.apparatus, settings_.smearing(), theta_fixed)
              : std::nan("");
      out_ << "Same-semiplane comparison\n";
      out_ << "  dBB ensemble: " << same << " of " << valid << " pairs (fraction " << frac
           << "), " << excluded << " excluded\n";
      out_ << "  SQM, detector " << run.fixed_detector << " at " << run.fixed_position
           << " m: fraction " << sqm_frac << '\n';
    }
    if (!any) throw ConfigError("no fits.json or ensemble file in " + dir.string());
  }

  void write_manifest() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    json m = {{"subcommand", sub_},
              {"config_path", opt_.config_path},
              {"paper_defaults", opt_.paper_defaults},
              {"overrides", opt_.overrides},
              {"seed", settings_.seed},
              {"format", opt_.format},
              {"settings", io::to_json(settings_)},
              {"outputs", outputs_},
              {"versions",
               {{"biphoton", BIPHOTON_VERSION},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"boost", BOOST_LIB_VERSION},
                {"file_format", io::kFormatVersion}}},
              {"timestamp", ts.str()}};
    if (sub_ == "analyze") m["counts_path"] = opt_.counts_path;
    std::ofstream f(out_path("manifest.json"), std::ios::binary);
    if (!f) throw ConfigError("cannot write manifest");
    f << m.dump(2) << '\n';
  }

  std::string sub_;
  Options opt_;
  std::ostream& out_;
  io::Settings settings_;
  std::vector<std::string> outputs_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Biphoton double-slit simulator and analysis pipeline", "biphoton"};
  app.require_subcommand(1, 1);
  Options opt;
  app.add_option("-c,--config", opt.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_flag("--paper-defaults", opt.paper_defaults, "Start from the published apparatus");
  app.add_option("-o,--out", opt.out_dir, "Output directory")->capture_default_str();
  app.add_option("-f,--format", opt.format, "Data file format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  app.add_option("--set", opt.overrides, "Config override key=value (dotted keys)");
  auto* seed_opt = app.add_option("-s,--seed", opt.seed, "RNG seed (overrides the config)");

  const std::vector<std::pair<const char*, const char*>> subs = {
      {"predict", "2D coincidence pattern over the grid"},
      {"section", "1D coincidence section with one detector fixed"},
      {"trajectories", "Bohmian trajectory paths for a few pairs"},
      {"ensemble", "Bohmian ensemble and same-semiplane statistics"},
      {"simulate", "Synthetic counting data"},
      {"analyze", "Normalization, fits and significance of counting data"},
      {"report", "Human-readable summary of analysis and ensemble outputs"}};
  for (const auto& [name, help] : subs) {
    auto* sc = app.add_subcommand(name, help);
    sc->fallthrough();
    if (std::string(name) == "analyze") {
      sc->add_option("--counts", opt.counts_path, "Counts file (default <out>/counts.csv)");
    }
    if (std::string(name) == "report") {
      sc->add_option("--in", opt.in_dir, "Directory with fits.json / ensemble.csv");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }
  opt.seed_given = seed_opt->count() > 0;

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    Run(sub, opt, out).execute();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
  return kSuccess;
}

}  // namespace biphoton::cli
