#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>

#include "rotcal/calibration.hpp"
#include "rotcal/errors.hpp"
#include "rotcal/rng.hpp"

using namespace rotcal;

namespace {

std::vector<CalibrationRow> linear_rows(int n_sites, int n_years, double a,
                                        double b) {
  std::vector<CalibrationRow> rows;
  Rng rng(3);
  for (int s = 0; s < n_sites; ++s) {
    for (int t = 0; t < n_years; ++t) {
      CalibrationRow r;
      r.site = "s" + std::to_string(s);
      r.year = 2000 + t;
      r.pair_index = 1;
      r.sat_effect = rng.uniform(-0.5, 1.0);
      r.exp_effect = a + b * r.sat_effect;  // exact, noise-free
      rows.push_back(r);
    }
  }
  return rows;
}

struct Generator {
  double a = 0.58, b = 1.75;
  double sigma_site = 0.3, sigma_year = 0.2, sigma_eps = 0.5;
  int n_sites = 60, n_years = 15;

  std::vector<CalibrationRow> draw(std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> site_fx(static_cast<std::size_t>(n_sites));
    std::vector<double> year_fx(static_cast<std::size_t>(n_years));
    for (auto& v : site_fx) v = rng.normal(0.0, sigma_site);
    for (auto& v : year_fx) v = rng.normal(0.0, sigma_year);
    std::vector<CalibrationRow> rows;
    for (int s = 0; s < n_sites; ++s) {
      for (int t = 0; t < n_years; ++t) {
        CalibrationRow r;
        r.site = "s" + std::to_string(s);
        r.year = 2000 + t;
        r.pair_index = 1;
        r.sat_effect = rng.normal(0.25, 0.3);
        r.exp_effect = a + b * r.sat_effect +
                       site_fx[static_cast<std::size_t>(s)] +
                       year_fx[static_cast<std::size_t>(t)] +
                       rng.normal(0.0, sigma_eps);
        rows.push_back(r);
      }
    }
    return rows;
  }
};

// Independent oracle: dense GLS with the true variance components plugged
// in, solved with a full n x n covariance factorization. Shares no code with
// the library's profiled REML path.
Eigen::Vector2d dense_gls_oracle(const std::vector<CalibrationRow>& rows,
                                 double var_site, double var_year,
                                 double var_eps) {
  const int n = static_cast<int>(rows.size());
  const FactorCodes codes = factor_codes(rows);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double cov = 0.0;
      if (codes.site_code[i] == codes.site_code[j]) cov += var_site;
      if (codes.year_code[i] == codes.year_code[j]) cov += var_year;
      if (i == j) cov += var_eps;
      v(i, j) = cov;
    }
  }
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rows[static_cast<std::size_t>(i)].sat_effect;
    y[i] = rows[static_cast<std::size_t>(i)].exp_effect;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(v);
  const Eigen::MatrixXd vinv_x = llt.solve(x);
  const Eigen::VectorXd vinv_y = llt.solve(y);
  return (x.transpose() * vinv_x).ldlt().solve(x.transpose() * vinv_y);
}

}  // namespace

TEST_CASE("noise-free linear data recovers intercept and slope exactly") {
  const auto rows = linear_rows(4, 3, 0.5, 2.0);
  const auto fit = fit_mixed_calibration(rows);
  CHECK(fit.converged);
  CHECK(fit.a == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(fit.b == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(fit.var_site == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(fit.var_year == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("forcing zero variance components reduces to ordinary least squares") {
  Generator gen;
  const auto rows = gen.draw(11);
  CalibrationOptions options;
  options.force_zero_site = true;
  options.force_zero_year = true;
  const auto fit = fit_mixed_calibration(rows, options);

  // OLS via the normal equations, computed here without the library path.
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rows[static_cast<std::size_t>(i)].sat_effect;
    y[i] = rows[static_cast<std::size_t>(i)].exp_effect;
  }
  const Eigen::Vector2d ols =
      (x.transpose() * x).ldlt().solve(x.transpose() * y);
  CHECK(fit.a == doctest::Approx(ols[0]).epsilon(1e-10));
  CHECK(fit.b == doctest::Approx(ols[1]).epsilon(1e-10));
}

TEST_CASE("REML recovers the generator against the dense GLS oracle") {
  Generator gen;
  const auto rows = gen.draw(21);
  const auto fit = fit_mixed_calibration(rows);
  CHECK(fit.converged);

  const Eigen::Vector2d oracle = dense_gls_oracle(
      rows, gen.sigma_site * gen.sigma_site, gen.sigma_year * gen.sigma_year,
      gen.sigma_eps * gen.sigma_eps);
  // REML and true-variance GLS agree up to estimation noise in the variance
  // components; with 60 x 15 cells that is tight.
  CHECK(fit.a == doctest::Approx(oracle[0]).epsilon(0.05));
  CHECK(std::abs(fit.b - oracle[1]) < 0.05);

  // Variance components land near the generator values.
  CHECK(std::abs(std::sqrt(fit.var_site) - gen.sigma_site) < 0.12);
  CHECK(std::abs(std::sqrt(fit.var_year) - gen.sigma_year) < 0.12);
  CHECK(std::abs(std::sqrt(fit.var_resid) - gen.sigma_eps) < 0.05);
}

TEST_CASE("recovery across replications stays within Monte Carlo tolerance") {
  Generator gen;
  const int reps = 12;
  double sum_a = 0, sum_b = 0, ss_a = 0, ss_b = 0;
  for (int r = 0; r < reps; ++r) {
    const auto fit = fit_mixed_calibration(gen.draw(100 + r));
    sum_a += fit.a;
    sum_b += fit.b;
    ss_a += fit.a * fit.a;
    ss_b += fit.b * fit.b;
  }
  const double mean_a = sum_a / reps, mean_b = sum_b / reps;
  const double se_a = std::sqrt((ss_a / reps - mean_a * mean_a) / (reps - 1));
  const double se_b = std::sqrt((ss_b / reps - mean_b * mean_b) / (reps - 1));
  CHECK(std::abs(mean_a - gen.a) <= 3.0 * se_a + 1e-3);
  CHECK(std::abs(mean_b - gen.b) <= 3.0 * se_b + 1e-3);
}

TEST_CASE("REML objective trace is monotone non-increasing") {
  Generator gen;
  const auto fit = fit_mixed_calibration(gen.draw(7));
  REQUIRE(fit.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-9);
}

TEST_CASE("constant satellite effect is a singular design") {
  auto rows = linear_rows(4, 3, 0.5, 2.0);
  for (auto& r : rows) r.sat_effect = 0.7;
  for (auto& r : rows) r.exp_effect = 1.0;
  CHECK_THROWS_AS(fit_mixed_calibration(rows), DataError);
}

TEST_CASE("precondition failures raise data errors") {
  CHECK_THROWS_AS(fit_mixed_calibration({}), DataError);
  auto rows = linear_rows(1, 5, 0.0, 1.0);  // one site only
  CHECK_THROWS_AS(fit_mixed_calibration(rows), DataError);
  rows = linear_rows(5, 1, 0.0, 1.0);  // one year only
  CHECK_THROWS_AS(fit_mixed_calibration(rows), DataError);
}

TEST_CASE("calibrated prediction is direct arithmetic") {
  MixedCalibrationFit fit;
  fit.a = 0.0;
  fit.b = 1.0;
  CHECK(predict_calibrated(fit, 0.7) == doctest::Approx(0.7));

  fit.a = 0.58;
  fit.b = 1.75;
  CHECK(predict_calibrated(fit, 0.24) == doctest::Approx(1.0));
  // a negative satellite effect flips sign after calibration
  CHECK(predict_calibrated(fit, -0.2) == doctest::Approx(0.23));
}

TEST_CASE("positive slope preserves the ordering of satellite effects") {
  Generator gen;
  const auto fit = fit_mixed_calibration(gen.draw(55));
  REQUIRE(fit.b > 0.0);
  Rng rng(5);
  double prev_in = -10.0, prev_out = predict_calibrated(fit, -10.0);
  for (int i = 0; i < 50; ++i) {
    const double sat = prev_in + rng.uniform(0.01, 0.5);
    const double out = predict_calibrated(fit, sat);
    CHECK(out > prev_out);
    prev_in = sat;
    prev_out = out;
  }
}

// ---------------------------------------------------------------------------
// Additive calibration
// ---------------------------------------------------------------------------

TEST_CASE("additive delta is the mean difference, exactly") {
  std::vector<CalibrationRow> rows;
  CalibrationRow r;
  r.site = "s1";
  r.year = 2001;
  r.exp_effect = 1.0;
  r.sat_effect = 0.5;
  rows.push_back(r);
  r.exp_effect = 2.0;
  r.sat_effect = 0.5;
  rows.push_back(r);
  const auto fit = fit_additive_calibration(rows, 200, 9);
  CHECK(fit.delta == doctest::Approx(1.0).epsilon(1e-15));

  SUBCASE("identical series give zero delta") {
    for (auto& row : rows) row.exp_effect = row.sat_effect;
    const auto zero = fit_additive_calibration(rows, 200, 9);
    CHECK(zero.delta == doctest::Approx(0.0));
  }
}

TEST_CASE("additive prediction and the mean identity") {
  AdditiveCalibrationFit fit;
  fit.delta = 0.0;
  CHECK(predict_additive(fit, 0.2) == doctest::Approx(0.2));
  fit.delta = 0.003;
  CHECK(predict_additive(fit, 0.197) == doctest::Approx(0.2));
  fit.delta = -0.1;
  CHECK(predict_additive(fit, 0.05) == doctest::Approx(-0.05));

  // Mean of calibrated values over the fitting rows equals mean(exp) exactly.
  Rng rng(8);
  std::vector<CalibrationRow> rows;
  for (int s = 0; s < 4; ++s) {
    for (int t = 0; t < 3; ++t) {
      CalibrationRow r;
      r.site = "s" + std::to_string(s);
      r.year = 2000 + t;
      r.sat_effect = rng.uniform(-0.3, 0.6);
      r.exp_effect = rng.uniform(-0.2, 0.8);
      rows.push_back(r);
    }
  }
  const auto fitted = fit_additive_calibration(rows, 500, 4);
  double mean_pred = 0, mean_exp = 0;
  for (const auto& row : rows) {
    mean_pred += predict_additive(fitted, row.sat_effect);
    mean_exp += row.exp_effect;
  }
  CHECK(mean_pred == doctest::Approx(mean_exp).epsilon(1e-12));
}

TEST_CASE("calibration fit JSON round trip") {
  Generator gen;
  const auto fit = fit_mixed_calibration(gen.draw(77));
  const auto restored = MixedCalibrationFit::from_json(fit.to_json());
  CHECK(restored.a == fit.a);
  CHECK(restored.b == fit.b);
  CHECK(restored.var_site == fit.var_site);
  CHECK(restored.se_b == fit.se_b);
}
