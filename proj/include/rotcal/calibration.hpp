#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcal/mixed_model.hpp"

namespace rotcal {

// One experimental pair joined with the satellite effect evaluated at the
// experiment's covariates. The weather columns and tillage flag feed the
// leave-one-site-out comparator variants; the calibration fits themselves
// use only (site, year, exp_effect, sat_effect).
struct CalibrationRow {
  std::string site;
  int year = 0;
  int pair_index = 0;
  double exp_effect = 0.0;
  double sat_effect = 0.0;
  double early_precip = 0.0;
  double growing_precip = 0.0;
  double gdd = 0.0;
  double edd = 0.0;
  int tillage = 0;
};

struct MixedCalibrationFit {
  double a = 0.0;   // intercept, t/ha
  double b = 0.0;   // slope on the satellite effect
  double var_site = 0.0;
  double var_year = 0.0;
  double var_resid = 0.0;
  double se_a = 0.0;
  double se_b = 0.0;
  int n_sites = 0;
  int n_years = 0;
  int n_rows = 0;
  bool converged = false;
  double reml_log_likelihood = 0.0;
  std::vector<double> objective_trace;

  std::array<double, 2> ci_a() const { return {a - 1.959964 * se_a, a + 1.959964 * se_a}; }
  std::array<double, 2> ci_b() const { return {b - 1.959964 * se_b, b + 1.959964 * se_b}; }

  nlohmann::ordered_json to_json() const;
  static MixedCalibrationFit from_json(const nlohmann::json& j);
};

struct CalibrationOptions {
  bool force_zero_site = false;  // exclude the site random effect
  bool force_zero_year = false;
  int max_iterations = 200;
};

// REML fit of  exp = a + b * sat + site_effect + year_effect + noise  with
// crossed Gaussian random intercepts. Requires >= 2 distinct sites, >= 2
// distinct years and >= 4 rows.
MixedCalibrationFit fit_mixed_calibration(const std::vector<CalibrationRow>& rows,
                                          const CalibrationOptions& options = {});

// a_hat + b_hat * sat; random effects are zero for new locations.
double predict_calibrated(const MixedCalibrationFit& fit, double sat_effect);

struct AdditiveCalibrationFit {
  double delta = 0.0;     // mean(exp) - mean(sat), exactly
  double se_delta = 0.0;  // cluster bootstrap over sites
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_rows = 0;
  int bootstrap_B = 0;

  nlohmann::ordered_json to_json() const;
  static AdditiveCalibrationFit from_json(const nlohmann::json& j);
};

AdditiveCalibrationFit fit_additive_calibration(
    const std::vector<CalibrationRow>& rows, int bootstrap_B = 2000,
    std::uint64_t seed = 12345);

double predict_additive(const AdditiveCalibrationFit& fit, double sat_effect);

// Calibration rows CSV (schema shared with the validate subcommand).
std::vector<CalibrationRow> read_calibration_rows(const std::string& path);
void write_calibration_rows(const std::string& path,
                            const std::vector<CalibrationRow>& rows);

// Stable integer codes for the site / year factors of a row set.
struct FactorCodes {
  std::vector<int> site_code, year_code;
  std::vector<std::string> sites;  // code -> label
  std::vector<int> years;
};
FactorCodes factor_codes(const std::vector<CalibrationRow>& rows);

}  // namespace rotcal
