// rotcal: estimates crop-rotation yield benefits from an observational
// satellite panel, paired field experiments, and a mixed-effects calibration
// between the two, with a simulator, leave-one-site-out benchmark, and
// cluster bootstrap. One subcommand per pipeline stage; `run` wires them.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "rotcal/calibration.hpp"
#include "rotcal/csv.hpp"
#include "rotcal/degree_days.hpp"
#include "rotcal/digest.hpp"
#include "rotcal/errors.hpp"
#include "rotcal/experimental.hpp"
#include "rotcal/forest.hpp"
#include "rotcal/ingestion.hpp"
#include "rotcal/provenance.hpp"
#include "rotcal/rng.hpp"
#include "rotcal/simulator.hpp"
#include "rotcal/summaries.hpp"
#include "rotcal/validation.hpp"

namespace {

using nlohmann::ordered_json;
using namespace rotcal;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };
LogLevel g_log_level = LogLevel::info;

void log_at(LogLevel level, const std::string& msg) {
  if (level < g_log_level) return;
  const char* tag = level == LogLevel::debug  ? "debug"
                    : level == LogLevel::info ? "info"
                    : level == LogLevel::warn ? "warn"
                                              : "error";
  std::cerr << "[" << tag << "] " << msg << "\n";
}

void set_log_level(const std::string& name) {
  if (name == "debug") g_log_level = LogLevel::debug;
  else if (name == "info") g_log_level = LogLevel::info;
  else if (name == "warn") g_log_level = LogLevel::warn;
  else if (name == "error") g_log_level = LogLevel::error;
  else throw ConfigError("unknown log level '" + name + "'");
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

double kv_double(const std::map<std::string, std::string>& kv,
                 const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto v = csv::parse_double(it->second);
  if (!v) throw ConfigError("config key '" + key + "': bad number '" +
                            it->second + "'");
  return *v;
}

long long kv_int(const std::map<std::string, std::string>& kv,
                 const std::string& key, long long fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto v = csv::parse_int(it->second);
  if (!v) throw ConfigError("config key '" + key + "': bad integer '" +
                            it->second + "'");
  return *v;
}

std::string kv_string(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

Crop crop_from_name(const std::string& name) {
  const auto crop = parse_crop(name);
  if (!crop) throw ConfigError("unknown crop '" + name + "'");
  return *crop;
}

// Covariate matrix rows with external identifiers, loadable from any CSV
// that carries the covariate columns (pixel files, experiment covariates,
// or a bare prediction request).
struct QueryRows {
  std::vector<std::string> ids;
  Eigen::MatrixXd X;
};

QueryRows read_query_rows(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  std::vector<int> cov_col(kNumCovariates, -1);
  for (int k = 0; k < kNumCovariates; ++k) {
    if (k == kYear) {
      cov_col[k] = table.require_column("year");
    } else {
      cov_col[k] = table.require_column(kCovariateNames[k]);
    }
  }
  const int c_rowid = table.column("row_id");
  const int c_pixel = table.column("pixel_id");
  const int c_site = table.column("site");
  const int c_year = table.require_column("year");

  QueryRows out;
  out.X.resize(static_cast<Eigen::Index>(table.rows.size()), kNumCovariates);
  int line = 1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    ++line;
    const auto& raw = table.rows[r];
    std::string id;
    if (c_rowid >= 0) {
      id = raw[static_cast<std::size_t>(c_rowid)];
    } else if (c_pixel >= 0) {
      id = raw[static_cast<std::size_t>(c_pixel)] + ":" +
           raw[static_cast<std::size_t>(c_year)];
    } else if (c_site >= 0) {
      id = raw[static_cast<std::size_t>(c_site)] + ":" +
           raw[static_cast<std::size_t>(c_year)];
    } else {
      id = std::to_string(r);
    }
    out.ids.push_back(id);
    for (int k = 0; k < kNumCovariates; ++k) {
      const auto v = csv::parse_double(raw[static_cast<std::size_t>(cov_col[k])]);
      if (!v)
        throw DataError(path + ":" + std::to_string(line) +
                        ": non-numeric covariate " +
                        (k == kYear ? "year" : kCovariateNames[k]));
      out.X(static_cast<Eigen::Index>(r), k) = *v;
    }
  }
  return out;
}

std::vector<SiteCoordinates> read_sites_csv(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const int c_site = table.require_column("site");
  const int c_lat = table.require_column("lat");
  const int c_lon = table.require_column("lon");
  std::vector<SiteCoordinates> out;
  for (const auto& raw : table.rows) {
    SiteCoordinates c;
    c.site = raw[static_cast<std::size_t>(c_site)];
    const auto lat = csv::parse_double(raw[static_cast<std::size_t>(c_lat)]);
    const auto lon = csv::parse_double(raw[static_cast<std::size_t>(c_lon)]);
    if (!lat || !lon) throw DataError(path + ": non-numeric coordinates");
    c.lat = *lat;
    c.lon = *lon;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// degree-days
// ---------------------------------------------------------------------------

struct DegreeDaysArgs {
  std::string in_path, out_path;
  int year = 0;  // 0 = infer from the first row
};

void run_degree_days(const DegreeDaysArgs& args) {
  const csv::Table table = csv::read_file(args.in_path);
  const int c_date = table.require_column("date");
  const int c_tmin = table.require_column("tmin_c");
  const int c_tmax = table.require_column("tmax_c");
  const int c_precip = table.require_column("precip_mm");

  std::vector<DailyWeather> series;
  int line = 1;
  for (const auto& raw : table.rows) {
    ++line;
    DailyWeather rec;
    rec.date = Date::parse(raw[static_cast<std::size_t>(c_date)]);
    const auto tmin = csv::parse_double(raw[static_cast<std::size_t>(c_tmin)]);
    const auto tmax = csv::parse_double(raw[static_cast<std::size_t>(c_tmax)]);
    const auto precip = csv::parse_double(raw[static_cast<std::size_t>(c_precip)]);
    if (!tmin || !tmax || !precip)
      throw DataError(args.in_path + ":" + std::to_string(line) +
                      ": non-numeric weather value");
    rec.tmin_c = *tmin;
    rec.tmax_c = *tmax;
    rec.precip_mm = *precip;
    if (rec.tmin_c > rec.tmax_c)
      throw DataError(args.in_path + ":" + std::to_string(line) +
                      ": tmin above tmax");
    series.push_back(rec);
  }
  if (series.empty()) throw DataError("no weather rows in " + args.in_path);
  const int year = args.year > 0 ? args.year : series.front().date.year;

  const SeasonalSummary summary = seasonal_summary(series, year);
  csv::Writer out(args.out_path);
  out.row({"gdd", "edd", "early_precip", "growing_precip"});
  out.row({csv::format_double(summary.gdd), csv::format_double(summary.edd),
           csv::format_double(summary.early_precip),
           csv::format_double(summary.growing_precip)});
  log_at(LogLevel::info, "degree-days written to " + args.out_path);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  double benchmark_scale = 0.0;  // > 0 selects the built-in benchmark
};

void write_simulation(const SimulationConfig& config, const std::string& out_dir) {
  const auto sim = simulate(config);
  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  write_observational((dir / "pixels.csv").string(), sim.pixels);
  write_experimental((dir / "subplots.csv").string(), sim.subplots);
  write_exp_covariates((dir / "exp_covariates.csv").string(), sim.exp_covariates);

  ordered_json truth = versioned_report("simulate", config.seed, config.to_json());
  truth["truth"] = sim.truth.to_json();
  write_json((dir / "truth.json").string(), truth);
  log_at(LogLevel::info, "simulated " + std::to_string(sim.pixels.size()) +
                             " pixels and " + std::to_string(sim.subplots.size()) +
                             " subplots into " + out_dir);
}

void run_simulate(const SimulateArgs& args) {
  SimulationConfig config;
  if (args.benchmark_scale > 0.0) {
    config = paper_like_benchmark_config(
        args.seed_override.value_or(1), args.benchmark_scale);
  } else {
    if (args.config_path.empty())
      throw ConfigError("simulate needs --config or --benchmark-scale");
    config = SimulationConfig::from_kv_file(args.config_path);
    if (args.seed_override) config.seed = *args.seed_override;
  }
  write_simulation(config, args.out_dir);
}

// ---------------------------------------------------------------------------
// fit-sat / predict
// ---------------------------------------------------------------------------

ForestConfig forest_config_from_kv(const std::map<std::string, std::string>& kv,
                                   const ForestConfig& base) {
  ForestConfig cfg = base;
  cfg.n_trees = static_cast<int>(kv_int(kv, "n_trees", cfg.n_trees));
  cfg.min_leaf = static_cast<int>(kv_int(kv, "min_leaf", cfg.min_leaf));
  cfg.mtry = static_cast<int>(kv_int(kv, "mtry", cfg.mtry));
  cfg.subsample_fraction =
      kv_double(kv, "subsample_fraction", cfg.subsample_fraction);
  cfg.honesty_fraction = kv_double(kv, "honesty_fraction", cfg.honesty_fraction);
  cfg.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<long long>(cfg.seed)));
  return cfg;
}

struct FitSatArgs {
  std::string crop = "corn";
  std::string in_path, out_path, config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> trees;
  int threads = 1;
};

CausalForestModel fit_sat_model(const std::vector<ObservationalPixel>& pixels,
                                Crop crop, const ForestConfig& config) {
  const RotationCategory treated = treated_rotation(crop);
  const RotationCategory control = control_rotation(crop);
  std::vector<TrainingSample> samples;
  for (const auto& px : pixels) {
    if (!px.estimation_eligible) continue;
    if (px.rotation != treated && px.rotation != control) continue;
    TrainingSample s;
    s.x = px.x;
    s.w = px.rotation == treated ? 1 : 0;
    s.y = px.yield_tha;
    samples.push_back(std::move(s));
  }
  if (samples.empty())
    throw DataError("no estimation-eligible rows for crop " +
                    std::string(to_string(crop)));
  log_at(LogLevel::info, "fitting causal forest on " +
                             std::to_string(samples.size()) + " rows, " +
                             std::to_string(config.n_trees) + " trees");
  return fit_causal_forest(samples, config, crop);
}

void run_fit_sat(const FitSatArgs& args) {
  const Crop crop = crop_from_name(args.crop);
  ForestConfig config;
  if (!args.config_path.empty())
    config = forest_config_from_kv(parse_kv_file(args.config_path), config);
  if (args.seed) config.seed = *args.seed;  // flags win over the config file
  if (args.trees) config.n_trees = *args.trees;
  config.n_threads = args.threads;

  const auto data = load_observational(args.in_path);
  for (const auto& issue : data.report.errors)
    log_at(LogLevel::warn, args.in_path + ":" + std::to_string(issue.line) +
                               ": " + issue.message);
  const auto model = fit_sat_model(data.pixels, crop, config);
  for (const auto& warning : model.warnings) log_at(LogLevel::debug, warning);

  ordered_json j = versioned_report("fit-sat", config.seed, config.to_json());
  j["model"] = model.to_json();
  write_json(args.out_path, j);
  log_at(LogLevel::info, "model written to " + args.out_path);
}

CausalForestModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.contains("model")) return CausalForestModel::from_json(j.at("model"));
  return CausalForestModel::from_json(j);
}

struct PredictArgs {
  std::string model_path, in_path, out_path;
};

void run_predict(const PredictArgs& args) {
  const auto model = load_model(args.model_path);
  const auto query = read_query_rows(args.in_path);
  csv::Writer out(args.out_path);
  out.row({"row_id", "tau_hat", "propensity"});
  for (std::size_t i = 0; i < query.ids.size(); ++i) {
    const Eigen::VectorXd x = query.X.row(static_cast<Eigen::Index>(i)).transpose();
    const auto pred = predict_tau(model, x);
    if (pred.extrapolated)
      log_at(LogLevel::debug, "row " + query.ids[i] +
                                  " lies outside the training hull");
    out.row({query.ids[i], csv::format_double(pred.tau),
             csv::format_double(predict_propensity(model, x))});
  }
  log_at(LogLevel::info, "predictions written to " + args.out_path);
}

// ---------------------------------------------------------------------------
// pair-exp
// ---------------------------------------------------------------------------

struct PairExpArgs {
  std::string crop = "corn";
  std::string in_path, out_path;
  std::string report_path;
  std::string sat_path;         // optional: predictions at exp covariates
  std::string covariates_path;  // optional: exp covariates for the join
  std::string rows_out;         // optional: calibration rows output
  bool no_filter = false;
  bool literal_cs_cc = false;
  int study_start = 2000;
};

void write_pairs_csv(const std::string& path,
                     const std::vector<PairedDifference>& pairs) {
  csv::Writer out(path);
  out.row({"site", "year", "pair_index", "treated_yield", "control_yield",
           "effect", "replicate", "tillage", "fertilizer", "drainage"});
  for (const auto& p : pairs) {
    out.row({p.site, std::to_string(p.year), std::to_string(p.pair_index),
             csv::format_double(p.treated_yield),
             csv::format_double(p.control_yield), csv::format_double(p.effect),
             p.replicate, p.tillage, p.fertilizer, p.drainage});
  }
}

std::vector<CalibrationRow> join_calibration_rows(
    const std::vector<PairedDifference>& pairs,
    const std::map<std::pair<std::string, int>, double>& sat,
    const std::vector<ExperimentCovariateRow>& covariates) {
  std::map<std::pair<std::string, int>, const ExperimentCovariateRow*> cov_map;
  for (const auto& c : covariates) cov_map[{c.site, c.year}] = &c;

  std::vector<CalibrationRow> rows;
  for (const auto& p : pairs) {
    const auto key = std::make_pair(p.site, p.year);
    const auto sat_it = sat.find(key);
    if (sat_it == sat.end())
      throw DataError("no satellite prediction for site " + p.site + " year " +
                      std::to_string(p.year));
    const auto cov_it = cov_map.find(key);
    if (cov_it == cov_map.end())
      throw DataError("no covariates for site " + p.site + " year " +
                      std::to_string(p.year));
    CalibrationRow r;
    r.site = p.site;
    r.year = p.year;
    r.pair_index = p.pair_index;
    r.exp_effect = p.effect;
    r.sat_effect = sat_it->second;
    r.early_precip = cov_it->second->x[kEarlyPrecip];
    r.growing_precip = cov_it->second->x[kGrowingPrecip];
    r.gdd = cov_it->second->x[kGdd];
    r.edd = cov_it->second->x[kEdd];
    r.tillage = has_tillage(p.tillage) ? 1 : 0;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::map<std::pair<std::string, int>, double> read_sat_predictions(
    const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const int c_id = table.require_column("row_id");
  const int c_tau = table.require_column("tau_hat");
  std::map<std::pair<std::string, int>, double> out;
  for (const auto& raw : table.rows) {
    const std::string& id = raw[static_cast<std::size_t>(c_id)];
    const auto colon = id.rfind(':');
    if (colon == std::string::npos)
      throw DataError("prediction row_id '" + id + "' is not site:year");
    const auto year = csv::parse_int(id.substr(colon + 1));
    if (!year) throw DataError("prediction row_id '" + id + "' has a bad year");
    const auto tau = csv::parse_double(raw[static_cast<std::size_t>(c_tau)]);
    if (!tau) throw DataError("non-numeric tau_hat in " + path);
    out[{id.substr(0, colon), static_cast<int>(*year)}] = *tau;
  }
  return out;
}

void run_pair_exp(const PairExpArgs& args) {
  const Crop crop = crop_from_name(args.crop);
  const auto data = load_experimental(args.in_path);
  for (const auto& issue : data.report.errors)
    log_at(LogLevel::warn, args.in_path + ":" + std::to_string(issue.line) +
                               ": " + issue.message);

  FilterResult filtered;
  if (args.no_filter) {
    filtered.kept = data.subplots;
  } else {
    FilterOptions options;
    options.study_start_year = args.study_start;
    options.literal_cs_cc = args.literal_cs_cc;
    filtered = apply_experiment_filters(data.subplots, crop, options);
  }

  const auto pairing = pair_subplots(filtered.kept, crop);
  write_pairs_csv(args.out_path, pairing.pairs);
  log_at(LogLevel::info, std::to_string(pairing.pairs.size()) +
                             " pairs written to " + args.out_path);

  if (!args.report_path.empty()) {
    ordered_json report = versioned_report("pair-exp", 0, ordered_json{});
    report["load"] = data.report.to_json();
    report["filters"] = filtered.to_json();
    report["pairing"] = pairing.to_json();
    if (!pairing.pairs.empty())
      report["site_year_means"] = site_year_means(pairing.pairs).to_json();
    write_json(args.report_path, report);
  }

  if (!args.rows_out.empty()) {
    if (args.sat_path.empty() || args.covariates_path.empty())
      throw ConfigError("--rows-out needs --sat and --covariates");
    const auto sat = read_sat_predictions(args.sat_path);
    const auto covariates = read_exp_covariates(args.covariates_path);
    const auto rows = join_calibration_rows(pairing.pairs, sat, covariates);
    write_calibration_rows(args.rows_out, rows);
    log_at(LogLevel::info, "calibration rows written to " + args.rows_out);
  }
}

// ---------------------------------------------------------------------------
// calibrate / validate / bootstrap
// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string mode = "mixed";
  std::string in_path, out_path;
  int bootstrap_B = 2000;
  std::uint64_t seed = 12345;
};

void run_calibrate(const CalibrateArgs& args) {
  const auto rows = read_calibration_rows(args.in_path);
  ordered_json config_echo = {{"mode", args.mode},
                              {"B", args.bootstrap_B}};
  ordered_json j = versioned_report("calibrate", args.seed, config_echo);
  if (args.mode == "mixed") {
    const auto fit = fit_mixed_calibration(rows);
    j["fit"] = fit.to_json();
  } else if (args.mode == "additive") {
    const auto fit = fit_additive_calibration(rows, args.bootstrap_B, args.seed);
    j["fit"] = fit.to_json();
  } else {
    throw ConfigError("calibrate mode must be 'mixed' or 'additive'");
  }
  write_json(args.out_path, j);
  log_at(LogLevel::info, "calibration written to " + args.out_path);
}

struct ValidateArgs {
  std::string variant = "all";
  std::string effects_mode = "all";
  std::string in_path, sites_path, out_path;
  bool year_blup = false;
};

ordered_json validate_grid(const std::vector<CalibrationRow>& rows,
                           const std::vector<SiteCoordinates>& sites,
                           const std::vector<std::string>& variants,
                           const std::vector<EffectsMode>& modes,
                           bool year_blup) {
  ordered_json mode_rows = ordered_json::array();
  for (const auto mode : modes) {
    ordered_json row;
    row["effects_mode"] = mode == EffectsMode::mixed    ? "mixed"
                          : mode == EffectsMode::linear ? "linear"
                                                        : "mixed_with_tillage";
    ordered_json rmse_by_variant;
    ordered_json reports = ordered_json::array();
    for (const auto& name : variants) {
      auto variant = parse_variant(name);
      if (!variant) throw ConfigError("unknown variant '" + name + "'");
      variant->effects_mode = mode;
      LoocvOptions options;
      options.predict_year_blup = year_blup;
      const auto report = loo_site_cv(rows, sites, *variant, options);
      rmse_by_variant[name] = report.rmse;
      reports.push_back(report.to_json());
    }
    row["rmse"] = rmse_by_variant;
    row["reports"] = reports;
    mode_rows.push_back(std::move(row));
  }
  return mode_rows;
}

void run_validate(const ValidateArgs& args) {
  const auto rows = read_calibration_rows(args.in_path);
  const auto sites = read_sites_csv(args.sites_path);

  std::vector<std::string> variants;
  if (args.variant == "all") {
    variants = variant_names();
  } else {
    variants.push_back(args.variant);
  }
  std::vector<EffectsMode> modes;
  if (args.effects_mode == "all") {
    modes = {EffectsMode::mixed, EffectsMode::linear,
             EffectsMode::mixed_with_tillage};
  } else {
    const auto mode = parse_effects_mode(args.effects_mode);
    if (!mode) throw ConfigError("unknown effects mode '" + args.effects_mode + "'");
    modes.push_back(*mode);
  }

  ordered_json config_echo = {{"variant", args.variant},
                              {"effects_mode", args.effects_mode},
                              {"year_blup", args.year_blup}};
  ordered_json j = versioned_report("validate", 0, config_echo);
  j["table"] = validate_grid(rows, sites, variants, modes, args.year_blup);
  write_json(args.out_path, j);
  log_at(LogLevel::info, "validation report written to " + args.out_path);
}

struct BootstrapArgs {
  std::string stat = "mean";
  std::string in_path, out_path;
  std::string cluster_col = "site";
  std::string x_col = "sat_effect";
  std::string y_col = "exp_effect";
  int B = 10000;
  std::uint64_t seed = 1;
};

void run_bootstrap(const BootstrapArgs& args) {
  const auto stat = parse_statistic(args.stat);
  if (!stat) throw ConfigError("unknown statistic '" + args.stat + "'");

  const csv::Table table = csv::read_file(args.in_path);
  const int c_cluster = table.require_column(args.cluster_col);
  const int c_y = table.require_column(args.y_col);
  const int c_x = table.column(args.x_col);
  const bool needs_x = *stat == BootstrapStatistic::pearson_correlation ||
                       *stat == BootstrapStatistic::ols_slope;
  if (needs_x && c_x < 0)
    throw DataError("missing required column '" + args.x_col + "'");

  std::map<std::string, std::vector<BootstrapRow>> by_cluster;
  for (const auto& raw : table.rows) {
    BootstrapRow row;
    const auto y = csv::parse_double(raw[static_cast<std::size_t>(c_y)]);
    if (!y) throw DataError("non-numeric value in column " + args.y_col);
    row.y = *y;
    if (c_x >= 0) {
      const auto x = csv::parse_double(raw[static_cast<std::size_t>(c_x)]);
      if (!x) throw DataError("non-numeric value in column " + args.x_col);
      row.x = *x;
    }
    by_cluster[raw[static_cast<std::size_t>(c_cluster)]].push_back(row);
  }
  std::vector<std::vector<BootstrapRow>> clusters;
  clusters.reserve(by_cluster.size());
  for (auto& [name, rows] : by_cluster) clusters.push_back(std::move(rows));

  const auto result = cluster_bootstrap(clusters, *stat, args.B, args.seed);
  ordered_json config_echo = {{"stat", args.stat},
                              {"B", args.B},
                              {"cluster_col", args.cluster_col}};
  ordered_json j = versioned_report("bootstrap", args.seed, config_echo);
  j["result"] = result.to_json();
  j["n_clusters"] = clusters.size();
  write_json(args.out_path, j);
  log_at(LogLevel::info, "bootstrap written to " + args.out_path);
}

// ---------------------------------------------------------------------------
// summarize
// ---------------------------------------------------------------------------

struct SummarizeArgs {
  std::string kind;
  std::string in_path, out_prefix;
  std::string effect_col = "effect";
  std::string covariate_col = "gdd";
  std::string x_col = "gdd";
  std::string y_col = "growing_precip";
  std::string lat_col = "lat";
  std::string lon_col = "lon";
  std::string year_col = "year";
  std::string cluster_col;
  int bins = 40;
  double cell_km = 10.0;
  bool cell_is_area = false;
  int B = 1000;
  std::uint64_t seed = 1;
};

std::vector<double> numeric_column(const csv::Table& table, const std::string& name) {
  const int c = table.require_column(name);
  std::vector<double> out;
  out.reserve(table.rows.size());
  for (const auto& raw : table.rows) {
    const auto v = csv::parse_double(raw[static_cast<std::size_t>(c)]);
    if (!v) throw DataError("non-numeric value in column " + name);
    out.push_back(*v);
  }
  return out;
}

void write_grid_outputs(const std::string& out_prefix, const BinnedGrid& grid,
                        ordered_json j) {
  // Long-format CSV: one row per populated cell.
  csv::Writer out(out_prefix + ".csv");
  out.row({"x_bin", "y_bin", "x_low", "x_high", "y_low", "y_high", "mean",
           "count"});
  for (Eigen::Index i = 0; i < grid.cell_mean.rows(); ++i) {
    for (Eigen::Index jx = 0; jx < grid.cell_mean.cols(); ++jx) {
      if (grid.cell_count(i, jx) == 0) continue;
      out.row({std::to_string(i), std::to_string(jx),
               csv::format_double(grid.x_edges[i]),
               csv::format_double(grid.x_edges[i + 1]),
               csv::format_double(grid.y_edges[jx]),
               csv::format_double(grid.y_edges[jx + 1]),
               std::isnan(grid.cell_mean(i, jx))
                   ? "NA"
                   : csv::format_double(grid.cell_mean(i, jx)),
               std::to_string(grid.cell_count(i, jx))});
    }
  }
  j["grid"] = grid.to_json();
  write_json(out_prefix + ".json", j);
}

void run_summarize(const SummarizeArgs& args) {
  const csv::Table table = csv::read_file(args.in_path);
  const auto effects = numeric_column(table, args.effect_col);
  ordered_json config_echo = {{"kind", args.kind}, {"in", args.in_path}};
  ordered_json j = versioned_report("summarize", args.seed, config_echo);

  if (args.kind == "quintile") {
    const auto covariate = numeric_column(table, args.covariate_col);
    const auto contrast = quintile_contrast(effects, covariate);
    j["quintile"] = contrast.to_json();
    j["covariate"] = args.covariate_col;
    csv::Writer out(args.out_prefix + ".csv");
    out.row({"covariate", "top_mean", "bottom_mean", "overall_mean"});
    out.row({args.covariate_col, csv::format_double(contrast.top_mean),
             csv::format_double(contrast.bottom_mean),
             csv::format_double(contrast.overall_mean)});
    write_json(args.out_prefix + ".json", j);
  } else if (args.kind == "heatmap") {
    const auto cx = numeric_column(table, args.x_col);
    const auto cy = numeric_column(table, args.y_col);
    j["x"] = args.x_col;
    j["y"] = args.y_col;
    write_grid_outputs(args.out_prefix,
                       heatmap_grid(effects, cx, cy, args.bins), std::move(j));
  } else if (args.kind == "spatial") {
    const auto lat = numeric_column(table, args.lat_col);
    const auto lon = numeric_column(table, args.lon_col);
    SpatialGridOptions options;
    options.cell_km = args.cell_km;
    options.cell_is_area = args.cell_is_area;
    // Cell size semantics are ambiguous between a side length and an area;
    // the header records which reading produced this grid.
    j["cell_mode"] = options.cell_is_area ? "area_km2" : "side_km";
    j["cell_km"] = args.cell_km;
    write_grid_outputs(args.out_prefix,
                       spatial_grid(effects, lat, lon, options), std::move(j));
  } else if (args.kind == "positivity") {
    const double fraction = positivity_fraction(effects);
    j["fraction_positive"] = fraction;
    if (!args.cluster_col.empty()) {
      const int c = table.require_column(args.cluster_col);
      std::map<std::string, std::vector<BootstrapRow>> by_cluster;
      for (std::size_t r = 0; r < table.rows.size(); ++r)
        by_cluster[table.rows[r][static_cast<std::size_t>(c)]].push_back(
            {0.0, effects[r]});
      std::vector<std::vector<BootstrapRow>> clusters;
      for (auto& [name, rows] : by_cluster) clusters.push_back(std::move(rows));
      const auto result = cluster_bootstrap(
          clusters, BootstrapStatistic::fraction_positive, args.B, args.seed);
      j["bootstrap"] = result.to_json();
    }
    csv::Writer out(args.out_prefix + ".csv");
    out.row({"fraction_positive"});
    out.row({csv::format_double(fraction)});
    write_json(args.out_prefix + ".json", j);
  } else if (args.kind == "trend") {
    const int c_year = table.require_column(args.year_col);
    std::vector<int> years;
    for (const auto& raw : table.rows) {
      const auto y = csv::parse_int(raw[static_cast<std::size_t>(c_year)]);
      if (!y) throw DataError("non-numeric year");
      years.push_back(static_cast<int>(*y));
    }
    const auto trend = temporal_trend(effects, years);
    j["trend"] = trend.to_json();
    csv::Writer out(args.out_prefix + ".csv");
    out.row({"year", "n", "min", "q1", "median", "q3", "max"});
    for (const auto& s : trend.per_year) {
      out.row({std::to_string(s.year), std::to_string(s.n),
               csv::format_double(s.min), csv::format_double(s.q1),
               csv::format_double(s.median), csv::format_double(s.q3),
               csv::format_double(s.max)});
    }
    write_json(args.out_prefix + ".json", j);
  } else {
    throw ConfigError("unknown summarize kind '" + args.kind + "'");
  }
  log_at(LogLevel::info, "summary written to " + args.out_prefix + ".{csv,json}");
}

// ---------------------------------------------------------------------------
// run: the full pipeline
// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

void run_pipeline(const RunArgs& args) {
  const auto kv = parse_kv_file(args.config_path);
  const Crop crop = crop_from_name(kv_string(kv, "crop", "corn"));
  const std::uint64_t seed = args.seed.value_or(
      static_cast<std::uint64_t>(kv_int(kv, "seed", 42)));
  const std::string out_dir = kv_string(kv, "out_dir", args.out_dir);

  // Referenced input files must exist before any computation starts.
  for (const auto* key : {"pixels", "subplots", "exp_covariates", "sim_config"}) {
    const auto it = kv.find(key);
    if (it != kv.end() && !std::filesystem::exists(it->second))
      throw ConfigError("configured " + std::string(key) +
                        " file does not exist: " + it->second);
  }
  if (kv.count("pixels") != kv.count("subplots") ||
      kv.count("pixels") != kv.count("exp_covariates"))
    throw ConfigError(
        "pixels, subplots, and exp_covariates must be configured together");

  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  std::vector<std::string> artifacts;
  auto artifact = [&](const std::string& name) {
    const std::string path = (dir / name).string();
    artifacts.push_back(path);
    return path;
  };

  ordered_json config_echo;
  for (const auto& [key, value] : kv) config_echo[key] = value;

  // ---- stage 1: inputs ----
  std::string pixels_path, subplots_path, covariates_path;
  if (kv.count("pixels")) {
    pixels_path = kv.at("pixels");
    subplots_path = kv.at("subplots");
    covariates_path = kv.at("exp_covariates");
  } else {
    SimulationConfig sim_config;
    if (kv.count("sim_config")) {
      sim_config = SimulationConfig::from_kv_file(kv.at("sim_config"));
      sim_config.seed = seed;
    } else {
      sim_config = paper_like_benchmark_config(
          seed, kv_double(kv, "benchmark_scale", 0.1));
      sim_config.crop = crop;
    }
    log_at(LogLevel::info, "stage simulate");
    write_simulation(sim_config, out_dir);
    pixels_path = artifact("pixels.csv");
    subplots_path = artifact("subplots.csv");
    covariates_path = artifact("exp_covariates.csv");
    artifacts.push_back((dir / "truth.json").string());
  }

  // ---- stage 2: satellite model ----
  log_at(LogLevel::info, "stage fit-sat");
  ForestConfig forest_config;
  forest_config.n_trees = static_cast<int>(kv_int(kv, "trees", 500));
  forest_config.min_leaf = static_cast<int>(kv_int(kv, "min_leaf", 5));
  forest_config.mtry = static_cast<int>(kv_int(kv, "mtry", 4));
  forest_config.subsample_fraction =
      kv_double(kv, "subsample_fraction", 0.5);
  forest_config.honesty_fraction = kv_double(kv, "honesty_fraction", 0.5);
  forest_config.seed = derive_seed(seed, 0xf17ull);
  forest_config.n_threads = args.threads;

  const auto observational = load_observational(pixels_path);
  const auto model = fit_sat_model(observational.pixels, crop, forest_config);
  {
    ordered_json j = versioned_report("fit-sat", forest_config.seed, config_echo);
    j["model"] = model.to_json();
    write_json(artifact("model.json"), j);
  }

  // ---- stage 3: predictions at the experiment covariates ----
  log_at(LogLevel::info, "stage predict");
  const auto exp_covariates = read_exp_covariates(covariates_path);
  std::map<std::pair<std::string, int>, double> sat;
  {
    csv::Writer out(artifact("sat_predictions.csv"));
    out.row({"row_id", "tau_hat", "propensity"});
    for (const auto& row : exp_covariates) {
      const auto pred = predict_tau(model, row.x);
      sat[{row.site, row.year}] = pred.tau;
      out.row({row.site + ":" + std::to_string(row.year),
               csv::format_double(pred.tau),
               csv::format_double(predict_propensity(model, row.x))});
    }
  }

  // ---- stage 4: experimental pairs ----
  log_at(LogLevel::info, "stage pair-exp");
  const auto experimental = load_experimental(subplots_path);
  FilterOptions filter_options;
  filter_options.study_start_year =
      static_cast<int>(kv_int(kv, "study_start", 2000));
  const auto filtered =
      apply_experiment_filters(experimental.subplots, crop, filter_options);
  const auto pairing = pair_subplots(filtered.kept, crop);
  if (pairing.pairs.empty()) throw DataError("no experimental pairs remain");
  write_pairs_csv(artifact("pairs.csv"), pairing.pairs);
  {
    ordered_json j = versioned_report("pair-exp", seed, config_echo);
    j["load"] = experimental.report.to_json();
    j["filters"] = filtered.to_json();
    j["pairing"] = pairing.to_json();
    j["site_year_means"] = site_year_means(pairing.pairs).to_json();
    write_json(artifact("pairs_report.json"), j);
  }

  // ---- stage 5: calibration rows ----
  const auto rows = join_calibration_rows(pairing.pairs, sat, exp_covariates);
  write_calibration_rows(artifact("rows.csv"), rows);

  // ---- stage 6: calibration ----
  log_at(LogLevel::info, "stage calibrate");
  const std::string mode = kv_string(
      kv, "calibration_mode", crop == Crop::corn ? "mixed" : "additive");
  const int bootstrap_B = static_cast<int>(kv_int(kv, "bootstrap_B", 1000));
  std::optional<MixedCalibrationFit> mixed_fit;
  std::optional<AdditiveCalibrationFit> additive_fit;
  {
    ordered_json j = versioned_report("calibrate", seed, config_echo);
    if (mode == "mixed") {
      mixed_fit = fit_mixed_calibration(rows);
      j["fit"] = mixed_fit->to_json();
    } else if (mode == "additive") {
      additive_fit =
          fit_additive_calibration(rows, bootstrap_B, derive_seed(seed, 0xaddull));
      j["fit"] = additive_fit->to_json();
    } else {
      throw ConfigError("calibration_mode must be 'mixed' or 'additive'");
    }
    write_json(artifact("calibration.json"), j);
  }
  auto calibrate_value = [&](double sat_effect) {
    return mixed_fit ? predict_calibrated(*mixed_fit, sat_effect)
                     : predict_additive(*additive_fit, sat_effect);
  };

  // ---- stage 7: leave-one-site-out validation ----
  log_at(LogLevel::info, "stage validate");
  {
    std::vector<SiteCoordinates> sites;
    std::set<std::string> seen;
    csv::Writer out(artifact("sites.csv"));
    out.row({"site", "lat", "lon"});
    for (const auto& row : exp_covariates) {
      if (!seen.insert(row.site).second) continue;
      sites.push_back({row.site, row.x[kLatitude], row.x[kLongitude]});
      out.row({row.site, csv::format_double(row.x[kLatitude]),
               csv::format_double(row.x[kLongitude])});
    }
    ordered_json j = versioned_report("validate", seed, config_echo);
    j["table"] = validate_grid(rows, sites, variant_names(),
                               {EffectsMode::mixed, EffectsMode::linear,
                                EffectsMode::mixed_with_tillage},
                               false);
    write_json(artifact("loocv.json"), j);
  }

  // ---- stage 8: pixel effects and summaries ----
  log_at(LogLevel::info, "stage summarize");
  std::vector<double> tau_hat, calibrated, lats, lons, gdds, precs;
  std::vector<int> years;
  {
    csv::Writer out(artifact("pixel_effects.csv"));
    out.row({"pixel_id", "year", "lat", "lon", "gdd", "growing_precip",
             "tau_hat", "propensity", "effect"});
    for (const auto& px : observational.pixels) {
      if (!px.estimation_eligible) continue;
      const auto pred = predict_tau(model, px.x);
      const double calibrated_value = calibrate_value(pred.tau);
      tau_hat.push_back(pred.tau);
      calibrated.push_back(calibrated_value);
      lats.push_back(px.x[kLatitude]);
      lons.push_back(px.x[kLongitude]);
      gdds.push_back(px.x[kGdd]);
      precs.push_back(px.x[kGrowingPrecip]);
      years.push_back(px.year);
      out.row({px.pixel_id, std::to_string(px.year),
               csv::format_double(px.x[kLatitude]),
               csv::format_double(px.x[kLongitude]),
               csv::format_double(px.x[kGdd]),
               csv::format_double(px.x[kGrowingPrecip]),
               csv::format_double(pred.tau),
               csv::format_double(predict_propensity(model, px.x)),
               csv::format_double(calibrated_value)});
    }
  }
  {
    ordered_json j = versioned_report("summarize", seed, config_echo);
    j["quintile_gdd_calibrated"] = quintile_contrast(calibrated, gdds).to_json();
    j["quintile_gdd_uncalibrated"] = quintile_contrast(tau_hat, gdds).to_json();
    j["positivity"] = ordered_json{
        {"calibrated", positivity_fraction(calibrated)},
        {"uncalibrated", positivity_fraction(tau_hat)},
    };

    // One-sided positivity interval: resample experiments, refit the
    // calibration, recompute the share of positive calibrated effects.
    {
      const FactorCodes codes = factor_codes(rows);
      std::vector<std::vector<int>> site_rows(codes.sites.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        site_rows[static_cast<std::size_t>(codes.site_code[i])].push_back(
            static_cast<int>(i));
      const int B = bootstrap_B;
      std::vector<double> replicate_fractions;
      int skipped = 0;
      for (int r = 0; r < B; ++r) {
        Rng rng(derive_seed(derive_seed(seed, 0x905ull),
                            static_cast<std::uint64_t>(r)));
        std::vector<CalibrationRow> resampled;
        for (std::size_t c = 0; c < site_rows.size(); ++c) {
          const auto& take = site_rows[rng.below(site_rows.size())];
          for (const int idx : take)
            resampled.push_back(rows[static_cast<std::size_t>(idx)]);
        }
        try {
          double a, b;
          if (mixed_fit) {
            const auto fit = fit_mixed_calibration(resampled);
            a = fit.a;
            b = fit.b;
          } else {
            const auto fit = fit_additive_calibration(resampled, 1, 1);
            a = fit.delta;
            b = 1.0;
          }
          int positive = 0;
          for (const double t : tau_hat) positive += (a + b * t) > 0.0 ? 1 : 0;
          replicate_fractions.push_back(static_cast<double>(positive) /
                                        static_cast<double>(tau_hat.size()));
        } catch (const std::exception&) {
          ++skipped;
        }
      }
      if (!replicate_fractions.empty()) {
        std::sort(replicate_fractions.begin(), replicate_fractions.end());
        j["positivity"]["ci_low"] = sorted_quantile(replicate_fractions, 0.05);
        j["positivity"]["ci_high"] = 1.0;
        j["positivity"]["B"] = B;
        j["positivity"]["n_skipped"] = skipped;
      }
    }

    j["trend_calibrated"] = temporal_trend(calibrated, years).to_json();
    write_json(artifact("summaries.json"), j);
  }
  {
    const std::string heatmap_prefix = (dir / "heatmap_gdd_precip").string();
    write_grid_outputs(heatmap_prefix, heatmap_grid(calibrated, gdds, precs, 40),
                       versioned_report("summarize", seed, config_echo));
    artifacts.push_back(heatmap_prefix + ".csv");
    artifacts.push_back(heatmap_prefix + ".json");

    const std::string spatial_prefix = (dir / "spatial_grid").string();
    write_grid_outputs(spatial_prefix, spatial_grid(calibrated, lats, lons),
                       versioned_report("summarize", seed, config_echo));
    artifacts.push_back(spatial_prefix + ".csv");
    artifacts.push_back(spatial_prefix + ".json");
  }

  // ---- manifest ----
  std::sort(artifacts.begin(), artifacts.end());
  ordered_json manifest = versioned_report("run", seed, config_echo);
  ordered_json files = ordered_json::array();
  for (const auto& path : artifacts) {
    files.push_back({{"path", path}, {"sha256", sha256_file_hex(path)}});
  }
  manifest["artifacts"] = files;
  write_json((dir / "manifest.json").string(), manifest);
  log_at(LogLevel::info, "manifest written to " +
                             (dir / "manifest.json").string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rotation-benefit estimation from satellite panels, field "
               "experiments, and mixed-effects calibration"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);

  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug|info|warn|error")
      ->capture_default_str();

  // Let app-level flags (--log-level) appear after the subcommand name too.
  auto add_sub = [&app](const std::string& name, const std::string& desc) {
    auto* sub = app.add_subcommand(name, desc);
    sub->fallthrough();
    return sub;
  };

  DegreeDaysArgs dd_args;
  auto* dd = add_sub("degree-days",
                                "seasonal degree days and precipitation sums "
                                "from one daily weather series");
  dd->add_option("--in", dd_args.in_path, "daily weather CSV")->required();
  dd->add_option("--out", dd_args.out_path, "output CSV")->required();
  dd->add_option("--year", dd_args.year,
                 "season year (default: year of the first row)");

  SimulateArgs sim_args;
  auto* sim = add_sub("simulate",
                                 "generate synthetic pixels, subplots, and "
                                 "ground truth");
  sim->add_option("--config", sim_args.config_path, "simulation config file");
  sim->add_option("--out-dir", sim_args.out_dir, "output directory")->required();
  sim->add_option("--seed", sim_args.seed_override, "seed override");
  sim->add_option("--benchmark-scale", sim_args.benchmark_scale,
                  "use the built-in study-shaped benchmark at this scale");

  FitSatArgs fit_args;
  auto* fit = add_sub("fit-sat",
                                 "fit the causal forest on observational "
                                 "pixels");
  fit->add_option("--crop", fit_args.crop, "corn|soy")->capture_default_str();
  fit->add_option("--in", fit_args.in_path, "pixels CSV")->required();
  fit->add_option("--out", fit_args.out_path, "model JSON")->required();
  fit->add_option("--config", fit_args.config_path, "forest config file");
  fit->add_option("--seed", fit_args.seed, "seed (wins over config)");
  fit->add_option("--trees", fit_args.trees, "tree count (wins over config)");
  fit->add_option("--threads", fit_args.threads, "worker threads")
      ->capture_default_str();

  PredictArgs pred_args;
  auto* pred = add_sub("predict",
                                  "evaluate a fitted model at covariate rows");
  pred->add_option("--model", pred_args.model_path, "model JSON")->required();
  pred->add_option("--in", pred_args.in_path, "covariates CSV")->required();
  pred->add_option("--out", pred_args.out_path, "predictions CSV")->required();

  PairExpArgs pair_args;
  auto* pair = add_sub("pair-exp",
                                  "filter subplots and build paired "
                                  "experimental effects");
  pair->add_option("--crop", pair_args.crop, "corn|soy")->capture_default_str();
  pair->add_option("--in", pair_args.in_path, "subplots CSV")->required();
  pair->add_option("--out", pair_args.out_path, "pairs CSV")->required();
  pair->add_option("--report", pair_args.report_path, "report JSON");
  pair->add_option("--sat", pair_args.sat_path,
                   "predictions at experiment covariates (for --rows-out)");
  pair->add_option("--covariates", pair_args.covariates_path,
                   "experiment covariates CSV (for --rows-out)");
  pair->add_option("--rows-out", pair_args.rows_out, "calibration rows CSV");
  pair->add_flag("--no-filter", pair_args.no_filter,
                 "skip the inclusion filters");
  pair->add_flag("--literal-cs-cc", pair_args.literal_cs_cc,
                 "corn site rule requires CS+CC instead of SC+CC");
  pair->add_option("--study-start", pair_args.study_start,
                   "first study year")->capture_default_str();

  CalibrateArgs cal_args;
  auto* cal = add_sub("calibrate",
                                 "fit the mixed or additive calibration");
  cal->add_option("--mode", cal_args.mode, "mixed|additive")
      ->capture_default_str();
  cal->add_option("--in", cal_args.in_path, "calibration rows CSV")->required();
  cal->add_option("--out", cal_args.out_path, "fit JSON")->required();
  cal->add_option("--B", cal_args.bootstrap_B,
                  "bootstrap iterations for the additive SE")
      ->capture_default_str();
  cal->add_option("--seed", cal_args.seed, "bootstrap seed")
      ->capture_default_str();

  ValidateArgs val_args;
  auto* val = add_sub("validate",
                                 "leave-one-site-out comparison of model "
                                 "variants");
  val->add_option("--variant", val_args.variant,
                  "variant name or 'all'")->capture_default_str();
  val->add_option("--effects-mode", val_args.effects_mode,
                  "mixed|linear|tillage|all")->capture_default_str();
  val->add_option("--in", val_args.in_path, "calibration rows CSV")->required();
  val->add_option("--sites", val_args.sites_path, "site coordinates CSV")
      ->required();
  val->add_option("--out", val_args.out_path, "report JSON")->required();
  val->add_flag("--year-blup", val_args.year_blup,
                "predict overlapping years with their fitted year effects");

  BootstrapArgs boot_args;
  auto* boot = add_sub("bootstrap", "cluster bootstrap intervals");
  boot->add_option("--stat", boot_args.stat,
                   "pearson_correlation|ols_slope|fraction_positive|mean")
      ->capture_default_str();
  boot->add_option("--in", boot_args.in_path, "input CSV")->required();
  boot->add_option("--out", boot_args.out_path, "result JSON")->required();
  boot->add_option("--B", boot_args.B, "iterations")->capture_default_str();
  boot->add_option("--seed", boot_args.seed, "seed")->capture_default_str();
  boot->add_option("--cluster-col", boot_args.cluster_col, "cluster column")
      ->capture_default_str();
  boot->add_option("--x-col", boot_args.x_col, "x column")
      ->capture_default_str();
  boot->add_option("--y-col", boot_args.y_col, "y column")
      ->capture_default_str();

  SummarizeArgs sum_args;
  auto* sum = add_sub("summarize", "post-estimation analytics");
  sum->add_option("--kind", sum_args.kind,
                  "quintile|heatmap|spatial|positivity|trend")->required();
  sum->add_option("--in", sum_args.in_path, "effects CSV")->required();
  sum->add_option("--out", sum_args.out_prefix, "output prefix")->required();
  sum->add_option("--effect-col", sum_args.effect_col, "effect column")
      ->capture_default_str();
  sum->add_option("--covariate-col", sum_args.covariate_col,
                  "quintile covariate column")->capture_default_str();
  sum->add_option("--x-col", sum_args.x_col, "heatmap x column")
      ->capture_default_str();
  sum->add_option("--y-col", sum_args.y_col, "heatmap y column")
      ->capture_default_str();
  sum->add_option("--lat-col", sum_args.lat_col, "latitude column")
      ->capture_default_str();
  sum->add_option("--lon-col", sum_args.lon_col, "longitude column")
      ->capture_default_str();
  sum->add_option("--year-col", sum_args.year_col, "year column")
      ->capture_default_str();
  sum->add_option("--cluster-col", sum_args.cluster_col,
                  "cluster column for the positivity interval");
  sum->add_option("--bins", sum_args.bins, "bins per heatmap axis")
      ->capture_default_str();
  sum->add_option("--cell-km", sum_args.cell_km, "spatial cell size")
      ->capture_default_str();
  sum->add_flag("--cell-area", sum_args.cell_is_area,
                "interpret --cell-km as an area in km^2");
  sum->add_option("--B", sum_args.B, "bootstrap iterations")
      ->capture_default_str();
  sum->add_option("--seed", sum_args.seed, "bootstrap seed")
      ->capture_default_str();

  RunArgs run_args;
  auto* run = add_sub("run", "full pipeline from a config file");
  run->add_option("--config", run_args.config_path, "pipeline config file")
      ->required();
  run->add_option("--out-dir", run_args.out_dir,
                  "output directory (config out_dir wins if set)")
      ->capture_default_str();
  run->add_option("--seed", run_args.seed, "seed override");
  run->add_option("--threads", run_args.threads, "worker threads")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
    set_log_level(log_level);

    if (*dd) run_degree_days(dd_args);
    if (*sim) run_simulate(sim_args);
    if (*fit) run_fit_sat(fit_args);
    if (*pred) run_predict(pred_args);
    if (*pair) run_pair_exp(pair_args);
    if (*cal) run_calibrate(cal_args);
    if (*val) run_validate(val_args);
    if (*boot) run_bootstrap(boot_args);
    if (*sum) run_summarize(sum_args);
    if (*run) run_pipeline(run_args);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return kExitConfig;
  } catch (const ConfigError& e) {
    log_at(LogLevel::error, std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    log_at(LogLevel::error, std::string("data error: ") + e.what());
    return kExitData;
  } catch (const NumericError& e) {
    log_at(LogLevel::error, std::string("numeric error: ") + e.what());
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    log_at(LogLevel::error, std::string("data error: ") + e.what());
    return kExitData;
  }
}
