#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcal/types.hpp"

namespace rotcal {

// True effect surface tau(x) used by the generator.
struct TauSpec {
  enum class Kind { constant, linear_gdd, two_stratum };
  Kind kind = Kind::constant;
  // constant:   tau = p0
  // linear_gdd: tau = p0 + p1 * (gdd - gdd_mean) / gdd_sd
  // two_stratum: tau = p1 if gdd > gdd_mean else p0
  double p0 = 1.0;
  double p1 = 0.0;

  std::string to_string() const;
  static TauSpec parse(const std::string& text);  // e.g. "constant:1.0"
};

struct SimulationConfig {
  Crop crop = Crop::corn;
  int n_pixels = 10000;
  int n_sites = 11;
  // Per-site durations in years; a single entry is broadcast to all sites.
  std::vector<int> site_years = {15, 15, 15, 15, 4, 4, 4, 4, 4, 4, 4};
  int pairs_per_site_year = 3;
  TauSpec tau;
  double confounder_gamma = 0.0;   // yield gain per unit fertilizer level
  double confounder_assoc = 0.0;   // rotation -> reduced fertilizer link
  double misclass_eps = 0.0;       // recorded-label flip probability
  double propensity_skew = 0.0;    // 0 = randomized; > 0 skews P(W=1|x) high
  double yield_noise_obs = 1.0;
  double yield_noise_exp = 0.4;
  double site_sd = 0.25;
  double year_sd = 0.15;
  int first_year = 2000;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  nlohmann::ordered_json to_json() const;
  std::string to_kv_string() const;
  static SimulationConfig from_kv_file(const std::string& path);
  static SimulationConfig from_kv_string(const std::string& text);
};

// Analytic expectations implied by the config, for oracle checks.
struct SimulatedTruth {
  TauSpec tau;
  double true_ate = 0.0;
  // E[obs diff-in-means] - true ATE from the fertilizer confounder:
  // gamma * (E[F | W=1] - E[F | W=0]) = -2 * gamma * assoc.
  double expected_confounding_bias = 0.0;
  // Misclassified labels shrink the residual-on-residual estimate by 1-2eps.
  double expected_attenuation = 1.0;
  // Implied linear map from satellite-scale effects back to the truth:
  // exp = implied_a + implied_b * sat.
  double implied_a = 0.0;
  double implied_b = 1.0;

  nlohmann::ordered_json to_json() const;
};

struct ExperimentCovariateRow {
  std::string site;
  int year = 0;
  Covariates x = Covariates::Zero();
};

struct SimulationOutput {
  std::vector<ObservationalPixel> pixels;
  std::vector<ExperimentalSubplot> subplots;
  std::vector<ExperimentCovariateRow> exp_covariates;  // one row per site-year
  SimulatedTruth truth;
  // Per-pixel generator internals (not written to files); used by oracles.
  std::vector<int> true_w;
  std::vector<double> true_tau;
};

SimulationOutput simulate(const SimulationConfig& config);

// Benchmark shaped like the study: 11 sites (4 long-term at 15 years, 7
// short-term at 4 years), a 180k-row observational panel scaled by `scale`,
// heterogeneous effect, misclassification and a fertilizer confounder.
SimulationConfig paper_like_benchmark_config(std::uint64_t seed,
                                             double scale = 0.1);

// Smooth yield baseline the centering forests must learn away. Documented
// here because oracle tests reproduce it independently:
//   6.0 + 1.5 z(gdd) - 0.8 z(edd) + 0.8 z(gp) - 0.3 z(gp)^2 + 0.4 z(ep)
//       + 1.2 nccpi_corn + 0.5 z(rootznaws)
// where z() standardizes by the generator's own distribution parameters.
double simulated_baseline_yield(const Covariates& x);

double true_tau_at(const TauSpec& spec, const Covariates& x);

// Generator location/scale of the covariate draws (used by z() above).
double generator_mean(int covariate_index);
double generator_sd(int covariate_index);

void write_exp_covariates(const std::string& path,
                          const std::vector<ExperimentCovariateRow>& rows);
std::vector<ExperimentCovariateRow> read_exp_covariates(const std::string& path);

}  // namespace rotcal
