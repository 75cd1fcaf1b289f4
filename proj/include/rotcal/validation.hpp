#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcal/calibration.hpp"

namespace rotcal {

// ---------------------------------------------------------------------------
// Leave-one-site-out cross-validation across the comparator model variants
// ---------------------------------------------------------------------------

enum class VariantKind {
  satellite_only,        // predict with the raw satellite effect
  nearest_experiment,    // observed mean of the geographically closest site
  all_other_experiments, // intercept (plus random effects) only
  single_weather,        // satellite term replaced by one weather covariate
  all_four_weather,      // replaced by all four weather covariates
  hybrid_calibration     // the calibration model
};

enum class EffectsMode { mixed, linear, mixed_with_tillage };

enum class WeatherCovariate { early_precip, growing_precip, gdd, edd };

struct ModelVariant {
  VariantKind kind = VariantKind::hybrid_calibration;
  EffectsMode effects_mode = EffectsMode::mixed;
  std::optional<WeatherCovariate> weather;  // required for single_weather

  std::string name() const;
};

// CLI-facing identifiers (variant column names follow the report layout).
std::optional<ModelVariant> parse_variant(const std::string& kind_name);
std::optional<EffectsMode> parse_effects_mode(const std::string& name);
const std::vector<std::string>& variant_names();  // report column order

struct SiteCoordinates {
  std::string site;
  double lat = 0.0;
  double lon = 0.0;
};

struct SiteFoldResult {
  std::string site;
  double predicted = 0.0;  // predicted mean effect across the site's years
  double observed = 0.0;   // observed mean of exp_effect, years averaged
  double squared_error = 0.0;
  int n_years = 0;
  bool ok = true;
  std::string error;
};

struct LoocvReport {
  std::string variant;
  std::string effects_mode;
  std::vector<SiteFoldResult> per_site;
  double rmse = 0.0;
  std::optional<double> rmse_long_term;   // sites with >= 14 years
  std::optional<double> rmse_short_term;  // sites with <= 5 years
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
};

struct LoocvOptions {
  // Held-out predictions set site and year random effects to zero; the year
  // BLUP alternative predicts overlapping years from the training fit.
  bool predict_year_blup = false;
  std::optional<std::pair<double, double>> forced_coefficients;  // (a, b)
  int long_term_min_years = 14;
  int short_term_max_years = 5;
};

LoocvReport loo_site_cv(const std::vector<CalibrationRow>& rows,
                        const std::vector<SiteCoordinates>& coordinates,
                        const ModelVariant& variant,
                        const LoocvOptions& options = {});

std::pair<std::optional<double>, std::optional<double>> weighted_split_report(
    const LoocvReport& report);

double haversine_km(double lat1, double lon1, double lat2, double lon2);

// ---------------------------------------------------------------------------
// Cluster bootstrap
// ---------------------------------------------------------------------------

struct BootstrapRow {
  double x = 0.0;  // e.g. sat_effect
  double y = 0.0;  // e.g. exp_effect, or the series of interest
};

enum class BootstrapStatistic {
  pearson_correlation,  // corr(x, y)
  ols_slope,            // slope of y on x
  fraction_positive,    // share of y > 0 (one-sided CI)
  mean                  // mean of y
};

std::optional<BootstrapStatistic> parse_statistic(const std::string& name);
const char* to_string(BootstrapStatistic stat);

struct BootstrapResult {
  double point = 0.0;  // statistic on the original data
  double ci_low = 0.0;
  double ci_high = 0.0;
  double replicate_sd = 0.0;
  int B = 0;
  int n_skipped = 0;  // replicates where the statistic was undefined
  bool one_sided = false;

  nlohmann::ordered_json to_json() const;
};

// Resamples clusters with replacement, keeping within-cluster rows intact.
// Percentile 95% intervals; fraction_positive uses the one-sided lower 5th
// percentile with upper bound 1.
BootstrapResult cluster_bootstrap(
    const std::vector<std::vector<BootstrapRow>>& clusters,
    BootstrapStatistic statistic, int B, std::uint64_t seed);

// Type-7 (linear interpolation) empirical quantile of a sorted sample.
double sorted_quantile(const std::vector<double>& sorted_values, double q);

}  // namespace rotcal
