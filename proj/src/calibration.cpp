#include "rotcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "rotcal/csv.hpp"
#include "rotcal/errors.hpp"
#include "rotcal/validation.hpp"

namespace rotcal {

FactorCodes factor_codes(const std::vector<CalibrationRow>& rows) {
  std::map<std::string, int> site_map;
  std::map<int, int> year_map;
  for (const auto& r : rows) {
    site_map.emplace(r.site, 0);
    year_map.emplace(r.year, 0);
  }
  FactorCodes codes;
  for (auto& [site, code] : site_map) {
    code = static_cast<int>(codes.sites.size());
    codes.sites.push_back(site);
  }
  for (auto& [year, code] : year_map) {
    code = static_cast<int>(codes.years.size());
    codes.years.push_back(year);
  }
  codes.site_code.reserve(rows.size());
  codes.year_code.reserve(rows.size());
  for (const auto& r : rows) {
    codes.site_code.push_back(site_map.at(r.site));
    codes.year_code.push_back(year_map.at(r.year));
  }
  return codes;
}

MixedCalibrationFit fit_mixed_calibration(const std::vector<CalibrationRow>& rows,
                                          const CalibrationOptions& options) {
  const int n = static_cast<int>(rows.size());
  if (n < 4) throw DataError("mixed calibration needs >= 4 rows");
  const FactorCodes codes = factor_codes(rows);
  if (codes.sites.size() < 2)
    throw DataError("mixed calibration needs >= 2 distinct sites");
  if (codes.years.size() < 2)
    throw DataError("mixed calibration needs >= 2 distinct years");

  MixedModelSpec spec;
  spec.X.resize(n, 2);
  spec.y.resize(n);
  for (int i = 0; i < n; ++i) {
    spec.X(i, 0) = 1.0;
    spec.X(i, 1) = rows[static_cast<std::size_t>(i)].sat_effect;
    spec.y[i] = rows[static_cast<std::size_t>(i)].exp_effect;
  }
  if (!options.force_zero_site) {
    spec.group_g = codes.site_code;
    spec.n_g = static_cast<int>(codes.sites.size());
  }
  if (!options.force_zero_year) {
    spec.group_h = codes.year_code;
    spec.n_h = static_cast<int>(codes.years.size());
  }

  MixedModelOptions mm_options;
  mm_options.max_iterations = options.max_iterations;
  const MixedModelFit mm = fit_mixed_model(spec, mm_options);

  MixedCalibrationFit fit;
  fit.a = mm.beta[0];
  fit.b = mm.beta[1];
  fit.var_site = mm.var_g;
  fit.var_year = mm.var_h;
  fit.var_resid = mm.var_resid;
  fit.se_a = std::sqrt(std::max(0.0, mm.cov_beta(0, 0)));
  fit.se_b = std::sqrt(std::max(0.0, mm.cov_beta(1, 1)));
  fit.n_sites = static_cast<int>(codes.sites.size());
  fit.n_years = static_cast<int>(codes.years.size());
  fit.n_rows = n;
  fit.converged = mm.converged;
  fit.reml_log_likelihood = mm.reml_log_likelihood;
  fit.objective_trace = mm.objective_trace;
  return fit;
}

double predict_calibrated(const MixedCalibrationFit& fit, double sat_effect) {
  return fit.a + fit.b * sat_effect;
}

AdditiveCalibrationFit fit_additive_calibration(
    const std::vector<CalibrationRow>& rows, int bootstrap_B,
    std::uint64_t seed) {
  if (rows.empty()) throw DataError("additive calibration needs >= 1 row");

  AdditiveCalibrationFit fit;
  fit.n_rows = static_cast<int>(rows.size());
  double exp_sum = 0.0, sat_sum = 0.0;
  for (const auto& r : rows) {
    exp_sum += r.exp_effect;
    sat_sum += r.sat_effect;
  }
  fit.delta = exp_sum / fit.n_rows - sat_sum / fit.n_rows;

  // Cluster bootstrap over sites for the uncertainty of delta; the per-row
  // series is exp - sat, whose mean is delta exactly.
  std::map<std::string, std::vector<BootstrapRow>> clusters;
  for (const auto& r : rows)
    clusters[r.site].push_back({0.0, r.exp_effect - r.sat_effect});
  std::vector<std::vector<BootstrapRow>> cluster_list;
  cluster_list.reserve(clusters.size());
  for (auto& [site, data] : clusters) cluster_list.push_back(std::move(data));

  const BootstrapResult boot = cluster_bootstrap(
      cluster_list, BootstrapStatistic::mean, bootstrap_B, seed);
  fit.se_delta = boot.replicate_sd;
  fit.ci_low = boot.ci_low;
  fit.ci_high = boot.ci_high;
  fit.bootstrap_B = bootstrap_B;
  return fit;
}

double predict_additive(const AdditiveCalibrationFit& fit, double sat_effect) {
  return fit.delta + sat_effect;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::ordered_json MixedCalibrationFit::to_json() const {
  return {{"mode", "mixed"},
          {"a", a},
          {"b", b},
          {"se_a", se_a},
          {"se_b", se_b},
          {"ci_a", ci_a()},
          {"ci_b", ci_b()},
          {"var_site", var_site},
          {"var_year", var_year},
          {"var_resid", var_resid},
          {"n_sites", n_sites},
          {"n_years", n_years},
          {"n_rows", n_rows},
          {"converged", converged},
          {"reml_log_likelihood", reml_log_likelihood},
          {"objective_trace", objective_trace}};
}

MixedCalibrationFit MixedCalibrationFit::from_json(const nlohmann::json& j) {
  MixedCalibrationFit fit;
  fit.a = j.at("a").get<double>();
  fit.b = j.at("b").get<double>();
  fit.se_a = j.at("se_a").get<double>();
  fit.se_b = j.at("se_b").get<double>();
  fit.var_site = j.at("var_site").get<double>();
  fit.var_year = j.at("var_year").get<double>();
  fit.var_resid = j.at("var_resid").get<double>();
  fit.n_sites = j.at("n_sites").get<int>();
  fit.n_years = j.at("n_years").get<int>();
  fit.n_rows = j.at("n_rows").get<int>();
  fit.converged = j.at("converged").get<bool>();
  fit.reml_log_likelihood = j.at("reml_log_likelihood").get<double>();
  fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  return fit;
}

nlohmann::ordered_json AdditiveCalibrationFit::to_json() const {
  return {{"mode", "additive"},
          {"delta", delta},
          {"se_delta", se_delta},
          {"ci", {ci_low, ci_high}},
          {"n_rows", n_rows},
          {"bootstrap_B", bootstrap_B}};
}

AdditiveCalibrationFit AdditiveCalibrationFit::from_json(const nlohmann::json& j) {
  AdditiveCalibrationFit fit;
  fit.delta = j.at("delta").get<double>();
  fit.se_delta = j.at("se_delta").get<double>();
  fit.ci_low = j.at("ci").at(0).get<double>();
  fit.ci_high = j.at("ci").at(1).get<double>();
  fit.n_rows = j.at("n_rows").get<int>();
  fit.bootstrap_B = j.at("bootstrap_B").get<int>();
  return fit;
}

// ---------------------------------------------------------------------------
// Rows CSV
// ---------------------------------------------------------------------------

const std::vector<std::string> kCalibrationRowSchema = {
    "site",          "year", "pair", "exp_effect", "sat_effect",
    "early_precip",  "growing_precip", "gdd",  "edd",        "tillage"};

std::vector<CalibrationRow> read_calibration_rows(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const int c_site = table.require_column("site");
  const int c_year = table.require_column("year");
  const int c_pair = table.require_column("pair");
  const int c_exp = table.require_column("exp_effect");
  const int c_sat = table.require_column("sat_effect");
  // Weather and tillage columns are optional; they only feed the
  // leave-one-site-out comparator variants.
  const int c_ep = table.column("early_precip");
  const int c_gp = table.column("growing_precip");
  const int c_gdd = table.column("gdd");
  const int c_edd = table.column("edd");
  const int c_till = table.column("tillage");

  std::vector<CalibrationRow> rows;
  int line = 1;
  for (const auto& raw : table.rows) {
    ++line;
    CalibrationRow r;
    r.site = raw[static_cast<std::size_t>(c_site)];
    auto num = [&](int col, const char* name) {
      const auto v = csv::parse_double(raw[static_cast<std::size_t>(col)]);
      if (!v)
        throw DataError("line " + std::to_string(line) + ": non-numeric " +
                        name);
      return *v;
    };
    r.year = static_cast<int>(num(c_year, "year"));
    r.pair_index = static_cast<int>(num(c_pair, "pair"));
    r.exp_effect = num(c_exp, "exp_effect");
    r.sat_effect = num(c_sat, "sat_effect");
    if (!std::isfinite(r.sat_effect))
      throw DataError("line " + std::to_string(line) +
                      ": sat_effect must be finite");
    if (c_ep >= 0) r.early_precip = num(c_ep, "early_precip");
    if (c_gp >= 0) r.growing_precip = num(c_gp, "growing_precip");
    if (c_gdd >= 0) r.gdd = num(c_gdd, "gdd");
    if (c_edd >= 0) r.edd = num(c_edd, "edd");
    if (c_till >= 0) r.tillage = static_cast<int>(num(c_till, "tillage"));
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_calibration_rows(const std::string& path,
                            const std::vector<CalibrationRow>& rows) {
  csv::Writer out(path);
  out.row(kCalibrationRowSchema);
  for (const auto& r : rows) {
    out.row({r.site, std::to_string(r.year), std::to_string(r.pair_index),
             csv::format_double(r.exp_effect), csv::format_double(r.sat_effect),
             csv::format_double(r.early_precip),
             csv::format_double(r.growing_precip), csv::format_double(r.gdd),
             csv::format_double(r.edd), std::to_string(r.tillage)});
  }
}

}  // namespace rotcal
