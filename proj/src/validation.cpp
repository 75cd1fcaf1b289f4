#include "rotcal/validation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "rotcal/errors.hpp"
#include "rotcal/rng.hpp"

namespace rotcal {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;

double weather_value(const CalibrationRow& row, WeatherCovariate cov) {
  switch (cov) {
    case WeatherCovariate::early_precip: return row.early_precip;
    case WeatherCovariate::growing_precip: return row.growing_precip;
    case WeatherCovariate::gdd: return row.gdd;
    case WeatherCovariate::edd: return row.edd;
  }
  return 0.0;
}

// Fixed-effects design for the fitted variants (those that regress).
// Columns: intercept, then the variant's predictors, then tillage if used.
Eigen::MatrixXd variant_design(const std::vector<CalibrationRow>& rows,
                               const ModelVariant& variant) {
  const int n = static_cast<int>(rows.size());
  std::vector<std::function<double(const CalibrationRow&)>> cols;
  cols.emplace_back([](const CalibrationRow&) { return 1.0; });
  switch (variant.kind) {
    case VariantKind::hybrid_calibration:
      cols.emplace_back([](const CalibrationRow& r) { return r.sat_effect; });
      break;
    case VariantKind::all_other_experiments:
      break;
    case VariantKind::single_weather:
      cols.emplace_back([cov = *variant.weather](const CalibrationRow& r) {
        return weather_value(r, cov);
      });
      break;
    case VariantKind::all_four_weather:
      for (const auto cov :
           {WeatherCovariate::early_precip, WeatherCovariate::growing_precip,
            WeatherCovariate::gdd, WeatherCovariate::edd}) {
        cols.emplace_back(
            [cov](const CalibrationRow& r) { return weather_value(r, cov); });
      }
      break;
    default:
      break;  // satellite_only / nearest_experiment never reach here
  }
  if (variant.effects_mode == EffectsMode::mixed_with_tillage) {
    cols.emplace_back(
        [](const CalibrationRow& r) { return static_cast<double>(r.tillage); });
  }
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(cols.size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cols.size(); ++c)
      X(i, static_cast<Eigen::Index>(c)) = cols[c](rows[static_cast<std::size_t>(i)]);
  return X;
}

// Mean of exp_effect per year, then averaged across years: the target the
// held-out prediction is compared against.
double observed_site_mean(const std::vector<CalibrationRow>& site_rows) {
  std::map<int, std::pair<double, int>> by_year;
  for (const auto& r : site_rows) {
    auto& [sum, count] = by_year[r.year];
    sum += r.exp_effect;
    ++count;
  }
  double total = 0.0;
  for (const auto& [year, agg] : by_year) total += agg.first / agg.second;
  return total / static_cast<double>(by_year.size());
}

double aggregate_predictions(const std::vector<CalibrationRow>& site_rows,
                             const std::vector<double>& row_predictions) {
  std::map<int, std::pair<double, int>> by_year;
  for (std::size_t i = 0; i < site_rows.size(); ++i) {
    auto& [sum, count] = by_year[site_rows[i].year];
    sum += row_predictions[i];
    ++count;
  }
  double total = 0.0;
  for (const auto& [year, agg] : by_year) total += agg.first / agg.second;
  return total / static_cast<double>(by_year.size());
}

}  // namespace

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  const double deg = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * deg;
  const double dlon = (lon2 - lon1) * deg;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * deg) * std::cos(lat2 * deg) *
                       std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

std::string ModelVariant::name() const {
  switch (kind) {
    case VariantKind::satellite_only: return "satellite_only";
    case VariantKind::nearest_experiment: return "nearest_experiment";
    case VariantKind::all_other_experiments: return "all_other_experiments";
    case VariantKind::single_weather:
      switch (*weather) {
        case WeatherCovariate::early_precip: return "early_precip";
        case WeatherCovariate::growing_precip: return "growing_precip";
        case WeatherCovariate::gdd: return "gdd";
        case WeatherCovariate::edd: return "edd";
      }
      return "single_weather";
    case VariantKind::all_four_weather: return "all_four_weather";
    case VariantKind::hybrid_calibration: return "hybrid_calibration";
  }
  return "?";
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {
      "satellite_only", "nearest_experiment", "all_other_experiments",
      "early_precip",   "growing_precip",     "gdd",
      "edd",            "all_four_weather",   "hybrid_calibration"};
  return names;
}

std::optional<ModelVariant> parse_variant(const std::string& kind_name) {
  ModelVariant v;
  if (kind_name == "satellite_only") {
    v.kind = VariantKind::satellite_only;
  } else if (kind_name == "nearest_experiment") {
    v.kind = VariantKind::nearest_experiment;
  } else if (kind_name == "all_other_experiments") {
    v.kind = VariantKind::all_other_experiments;
  } else if (kind_name == "early_precip") {
    v.kind = VariantKind::single_weather;
    v.weather = WeatherCovariate::early_precip;
  } else if (kind_name == "growing_precip") {
    v.kind = VariantKind::single_weather;
    v.weather = WeatherCovariate::growing_precip;
  } else if (kind_name == "gdd") {
    v.kind = VariantKind::single_weather;
    v.weather = WeatherCovariate::gdd;
  } else if (kind_name == "edd") {
    v.kind = VariantKind::single_weather;
    v.weather = WeatherCovariate::edd;
  } else if (kind_name == "all_four_weather") {
    v.kind = VariantKind::all_four_weather;
  } else if (kind_name == "hybrid_calibration") {
    v.kind = VariantKind::hybrid_calibration;
  } else {
    return std::nullopt;
  }
  return v;
}

std::optional<EffectsMode> parse_effects_mode(const std::string& name) {
  if (name == "mixed" || name == "preferred") return EffectsMode::mixed;
  if (name == "linear") return EffectsMode::linear;
  if (name == "tillage" || name == "mixed_with_tillage")
    return EffectsMode::mixed_with_tillage;
  return std::nullopt;
}

LoocvReport loo_site_cv(const std::vector<CalibrationRow>& rows,
                        const std::vector<SiteCoordinates>& coordinates,
                        const ModelVariant& variant,
                        const LoocvOptions& options) {
  if (variant.kind == VariantKind::single_weather && !variant.weather)
    throw ConfigError("single_weather variant needs a weather covariate");

  std::map<std::string, std::vector<CalibrationRow>> by_site;
  for (const auto& r : rows) by_site[r.site].push_back(r);
  if (by_site.size() < 3)
    throw DataError("leave-one-site-out needs >= 3 sites, got " +
                    std::to_string(by_site.size()));

  std::map<std::string, SiteCoordinates> coord_map;
  for (const auto& c : coordinates) coord_map[c.site] = c;
  if (variant.kind == VariantKind::nearest_experiment) {
    for (const auto& [site, site_rows] : by_site) {
      if (!coord_map.count(site))
        throw DataError("nearest_experiment variant: no coordinates for site " +
                        site);
    }
  }

  LoocvReport report;
  report.variant = variant.name();
  switch (variant.effects_mode) {
    case EffectsMode::mixed: report.effects_mode = "mixed"; break;
    case EffectsMode::linear: report.effects_mode = "linear"; break;
    case EffectsMode::mixed_with_tillage:
      report.effects_mode = "mixed_with_tillage";
      break;
  }

  for (const auto& [held_out, held_rows] : by_site) {
    SiteFoldResult fold;
    fold.site = held_out;
    {
      std::set<int> years;
      for (const auto& r : held_rows) years.insert(r.year);
      fold.n_years = static_cast<int>(years.size());
    }
    fold.observed = observed_site_mean(held_rows);

    std::vector<CalibrationRow> train;
    for (const auto& r : rows)
      if (r.site != held_out) train.push_back(r);

    try {
      std::vector<double> row_predictions(held_rows.size(), 0.0);

      if (variant.kind == VariantKind::satellite_only) {
        for (std::size_t i = 0; i < held_rows.size(); ++i)
          row_predictions[i] = held_rows[i].sat_effect;
      } else if (variant.kind == VariantKind::nearest_experiment) {
        const auto& here = coord_map.at(held_out);
        std::string best_site;
        double best_km = std::numeric_limits<double>::infinity();
        for (const auto& [other, other_rows] : by_site) {
          if (other == held_out) continue;
          const auto it = coord_map.find(other);
          if (it == coord_map.end())
            throw DataError("no coordinates for site " + other);
          const double km = haversine_km(here.lat, here.lon, it->second.lat,
                                         it->second.lon);
          if (km < best_km) {
            best_km = km;
            best_site = other;
          }
        }
        const double nearest_mean = observed_site_mean(by_site.at(best_site));
        std::fill(row_predictions.begin(), row_predictions.end(), nearest_mean);
      } else if (options.forced_coefficients &&
                 variant.kind == VariantKind::hybrid_calibration) {
        const auto [a, b] = *options.forced_coefficients;
        for (std::size_t i = 0; i < held_rows.size(); ++i)
          row_predictions[i] = a + b * held_rows[i].sat_effect;
      } else {
        // Fitted variants. Mixed modes need identifiable random effects.
        const FactorCodes codes = factor_codes(train);
        if (train.size() < 4) throw DataError("fewer than 4 training rows");
        const bool mixed = variant.effects_mode != EffectsMode::linear;
        if (mixed && (codes.sites.size() < 2 || codes.years.size() < 2))
          throw DataError("fewer than 2 sites or years remain in training");

        MixedModelSpec spec;
        spec.X = variant_design(train, variant);
        spec.y.resize(static_cast<Eigen::Index>(train.size()));
        for (std::size_t i = 0; i < train.size(); ++i)
          spec.y[static_cast<Eigen::Index>(i)] = train[i].exp_effect;
        if (mixed) {
          spec.group_g = codes.site_code;
          spec.n_g = static_cast<int>(codes.sites.size());
          spec.group_h = codes.year_code;
          spec.n_h = static_cast<int>(codes.years.size());
        }

        Eigen::VectorXd beta;
        Eigen::VectorXd year_blup;
        std::map<int, int> year_code_of;
        if (mixed) {
          const MixedModelFit fit = fit_mixed_model(spec);
          beta = fit.beta;
          year_blup = fit.blup_h;
          for (std::size_t i = 0; i < codes.years.size(); ++i)
            year_code_of[codes.years[i]] = static_cast<int>(i);
        } else {
          const GlsResult fit = gls_solve(spec, 0.0, 0.0, 1.0);
          beta = fit.beta;
        }

        const Eigen::MatrixXd x_held = variant_design(held_rows, variant);
        for (std::size_t i = 0; i < held_rows.size(); ++i) {
          double pred = x_held.row(static_cast<Eigen::Index>(i)).dot(beta);
          if (mixed && options.predict_year_blup) {
            const auto it = year_code_of.find(held_rows[i].year);
            if (it != year_code_of.end()) pred += year_blup[it->second];
          }
          row_predictions[i] = pred;
        }
      }

      fold.predicted = aggregate_predictions(held_rows, row_predictions);
      const double err = fold.predicted - fold.observed;
      fold.squared_error = err * err;
    } catch (const std::exception& e) {
      fold.ok = false;
      fold.error = e.what();
      report.warnings.push_back("fold '" + held_out +
                                "' excluded from RMSE: " + fold.error);
    }
    report.per_site.push_back(std::move(fold));
  }

  auto rmse_over = [&](auto&& keep) -> std::optional<double> {
    double sum = 0.0;
    int count = 0;
    for (const auto& fold : report.per_site) {
      if (!fold.ok || !keep(fold)) continue;
      sum += fold.squared_error;
      ++count;
    }
    if (count == 0) return std::nullopt;
    return std::sqrt(sum / count);
  };

  report.rmse = rmse_over([](const SiteFoldResult&) { return true; }).value_or(
      std::numeric_limits<double>::quiet_NaN());
  report.rmse_long_term = rmse_over([&](const SiteFoldResult& f) {
    return f.n_years >= options.long_term_min_years;
  });
  report.rmse_short_term = rmse_over([&](const SiteFoldResult& f) {
    return f.n_years <= options.short_term_max_years;
  });
  return report;
}

std::pair<std::optional<double>, std::optional<double>> weighted_split_report(
    const LoocvReport& report) {
  return {report.rmse_long_term, report.rmse_short_term};
}

nlohmann::ordered_json LoocvReport::to_json() const {
  nlohmann::ordered_json sites = nlohmann::ordered_json::array();
  for (const auto& fold : per_site) {
    nlohmann::ordered_json j = {{"site", fold.site},
                                {"n_years", fold.n_years},
                                {"observed", fold.observed},
                                {"ok", fold.ok}};
    if (fold.ok) {
      j["predicted"] = fold.predicted;
      j["squared_error"] = fold.squared_error;
    } else {
      j["error"] = fold.error;
    }
    sites.push_back(std::move(j));
  }
  nlohmann::ordered_json j = {{"variant", variant},
                              {"effects_mode", effects_mode},
                              {"rmse", rmse},
                              {"per_site", sites},
                              {"warnings", warnings}};
  j["rmse_long_term"] =
      rmse_long_term ? nlohmann::ordered_json(*rmse_long_term) : nullptr;
  j["rmse_short_term"] =
      rmse_short_term ? nlohmann::ordered_json(*rmse_short_term) : nullptr;
  return j;
}

// ---------------------------------------------------------------------------
// Cluster bootstrap
// ---------------------------------------------------------------------------

std::optional<BootstrapStatistic> parse_statistic(const std::string& name) {
  if (name == "pearson_correlation" || name == "pearson")
    return BootstrapStatistic::pearson_correlation;
  if (name == "ols_slope" || name == "slope") return BootstrapStatistic::ols_slope;
  if (name == "fraction_positive")
    return BootstrapStatistic::fraction_positive;
  if (name == "mean") return BootstrapStatistic::mean;
  return std::nullopt;
}

const char* to_string(BootstrapStatistic stat) {
  switch (stat) {
    case BootstrapStatistic::pearson_correlation: return "pearson_correlation";
    case BootstrapStatistic::ols_slope: return "ols_slope";
    case BootstrapStatistic::fraction_positive: return "fraction_positive";
    case BootstrapStatistic::mean: return "mean";
  }
  return "?";
}

double sorted_quantile(const std::vector<double>& sorted_values, double q) {
  if (sorted_values.empty())
    throw NumericError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted_values.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted_values.size()) return sorted_values.back();
  const double frac = h - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

namespace {

std::optional<double> compute_statistic(const std::vector<BootstrapRow>& rows,
                                        BootstrapStatistic stat) {
  const double n = static_cast<double>(rows.size());
  if (rows.empty()) return std::nullopt;
  switch (stat) {
    case BootstrapStatistic::mean: {
      double sum = 0.0;
      for (const auto& r : rows) sum += r.y;
      return sum / n;
    }
    case BootstrapStatistic::fraction_positive: {
      int pos = 0;
      for (const auto& r : rows) pos += r.y > 0.0 ? 1 : 0;
      return static_cast<double>(pos) / n;
    }
    case BootstrapStatistic::ols_slope:
    case BootstrapStatistic::pearson_correlation: {
      if (rows.size() < 2) return std::nullopt;
      double sx = 0.0, sy = 0.0;
      for (const auto& r : rows) {
        sx += r.x;
        sy += r.y;
      }
      const double mx = sx / n, my = sy / n;
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (const auto& r : rows) {
        sxx += (r.x - mx) * (r.x - mx);
        syy += (r.y - my) * (r.y - my);
        sxy += (r.x - mx) * (r.y - my);
      }
      if (stat == BootstrapStatistic::ols_slope) {
        if (sxx <= 0.0) return std::nullopt;
        return sxy / sxx;
      }
      if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
      return sxy / std::sqrt(sxx * syy);
    }
  }
  return std::nullopt;
}

}  // namespace

BootstrapResult cluster_bootstrap(
    const std::vector<std::vector<BootstrapRow>>& clusters,
    BootstrapStatistic statistic, int B, std::uint64_t seed) {
  if (clusters.empty()) throw DataError("cluster bootstrap needs >= 1 cluster");
  if (B < 1) throw ConfigError("bootstrap iterations must be >= 1");

  std::vector<BootstrapRow> pooled;
  for (const auto& cluster : clusters)
    pooled.insert(pooled.end(), cluster.begin(), cluster.end());
  const auto point = compute_statistic(pooled, statistic);
  if (!point)
    throw NumericError("bootstrap statistic undefined on the original data");

  const std::size_t n_clusters = clusters.size();
  std::vector<double> replicates;
  replicates.reserve(static_cast<std::size_t>(B));
  int skipped = 0;
  std::vector<BootstrapRow> sample;
  for (int r = 0; r < B; ++r) {
    // Replicate r draws from its own derived stream: schedule-independent.
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    sample.clear();
    for (std::size_t c = 0; c < n_clusters; ++c) {
      const auto& cluster = clusters[rng.below(n_clusters)];
      sample.insert(sample.end(), cluster.begin(), cluster.end());
    }
    const auto value = compute_statistic(sample, statistic);
    if (value) {
      replicates.push_back(*value);
    } else {
      ++skipped;
    }
  }
  if (replicates.empty())
    throw NumericError("bootstrap statistic undefined on every replicate");

  std::sort(replicates.begin(), replicates.end());
  BootstrapResult result;
  result.point = *point;
  result.B = B;
  result.n_skipped = skipped;
  result.one_sided = statistic == BootstrapStatistic::fraction_positive;
  if (result.one_sided) {
    result.ci_low = sorted_quantile(replicates, 0.05);
    result.ci_high = 1.0;
  } else {
    result.ci_low = sorted_quantile(replicates, 0.025);
    result.ci_high = sorted_quantile(replicates, 0.975);
  }
  double mean = 0.0;
  for (const double v : replicates) mean += v;
  mean /= static_cast<double>(replicates.size());
  double ss = 0.0;
  for (const double v : replicates) ss += (v - mean) * (v - mean);
  result.replicate_sd =
      replicates.size() > 1
          ? std::sqrt(ss / (static_cast<double>(replicates.size()) - 1.0))
          : 0.0;
  return result;
}

nlohmann::ordered_json BootstrapResult::to_json() const {
  return {{"point", point},
          {"ci_low", ci_low},
          {"ci_high", ci_high},
          {"replicate_sd", replicate_sd},
          {"B", B},
          {"n_skipped", n_skipped},
          {"one_sided", one_sided}};
}

}  // namespace rotcal
