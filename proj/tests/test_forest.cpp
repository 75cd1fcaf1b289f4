#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rotcal/forest.hpp"
#include "rotcal/rng.hpp"

using namespace rotcal;

namespace {

// Synthetic panels for the estimator oracles, generated here so the checks
// stay independent of the library's simulator.
struct Synthetic {
  Eigen::MatrixXd X;
  std::vector<int> w;
  Eigen::VectorXd y;
};

Synthetic make_panel(int n, std::uint64_t seed,
                     const std::function<double(const Eigen::VectorXd&)>& tau,
                     double noise_sd, double treat_p = 0.5) {
  Rng rng(seed);
  Synthetic data;
  data.X.resize(n, kNumCovariates);
  data.w.resize(static_cast<std::size_t>(n));
  data.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kNumCovariates; ++k)
      data.X(i, k) = rng.uniform(-1.0, 1.0);
    const int w = rng.bernoulli(treat_p) ? 1 : 0;
    data.w[static_cast<std::size_t>(i)] = w;
    data.y[i] = w * tau(data.X.row(i).transpose()) +
                (noise_sd > 0 ? rng.normal(0.0, noise_sd) : 0.0);
  }
  return data;
}

double difference_in_means(const Synthetic& data) {
  double s1 = 0.0, s0 = 0.0;
  int n1 = 0, n0 = 0;
  for (int i = 0; i < data.y.size(); ++i) {
    if (data.w[static_cast<std::size_t>(i)]) {
      s1 += data.y[i];
      ++n1;
    } else {
      s0 += data.y[i];
      ++n0;
    }
  }
  return s1 / n1 - s0 / n0;
}

double mean_tau_over_training(const CausalForestModel& model,
                              const Eigen::MatrixXd& X) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    sum += predict_tau(model, X.row(i).transpose()).tau;
  return sum / static_cast<double>(X.rows());
}

ForestConfig test_config(int n_trees, std::uint64_t seed) {
  ForestConfig cfg;
  cfg.n_trees = n_trees;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Regression forest
// ---------------------------------------------------------------------------

TEST_CASE("regression forest predicts a constant target exactly") {
  Rng rng(1);
  const int n = 200;
  Eigen::MatrixXd X(n, kNumCovariates);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kNumCovariates; ++k) X(i, k) = rng.uniform(0.0, 1.0);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(n, 3.25);

  const auto forest = fit_regression_forest(X, y, test_config(30, 7));
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(0.0, 1.0);
    CHECK(forest.predict_row(x) == doctest::Approx(3.25).epsilon(1e-12));
  }
  for (int i = 0; i < n; ++i)
    CHECK(forest.oob_prediction[i] == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("regression forest recovers a step function out of bag") {
  Rng rng(2);
  const int n = 2000;
  const double step = 4.0;
  Eigen::MatrixXd X(n, kNumCovariates);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kNumCovariates; ++k) X(i, k) = rng.uniform(-1.0, 1.0);
    y[i] = X(i, kGdd) > 0.0 ? step : 0.0;
  }
  const auto forest = fit_regression_forest(X, y, test_config(100, 3));
  double sse = 0.0;
  for (int i = 0; i < n; ++i) {
    const double err = forest.oob_prediction[i] - y[i];
    sse += err * err;
  }
  const double rmse = std::sqrt(sse / n);
  CHECK(rmse < 0.2 * step);
}

TEST_CASE("regression forest rejects too few samples") {
  ForestConfig cfg = test_config(10, 1);
  const int n = cfg.min_leaf - 1;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, kNumCovariates);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  CHECK_THROWS_AS(fit_regression_forest(X, y, cfg), DataError);
}

// ---------------------------------------------------------------------------
// Causal forest oracles
// ---------------------------------------------------------------------------

TEST_CASE("null effect: tau is zero everywhere") {
  auto data = make_panel(
      1200, 11, [](const Eigen::VectorXd&) { return 0.0; }, 0.0);
  data.y.setConstant(5.0);  // y = 5 + 0 * w, noise-free
  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(60, 5));
  Rng rng(8);
  for (int i = 0; i < 25; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    CHECK(std::abs(predict_tau(model, x).tau) <= 0.05);
  }
}

TEST_CASE("constant effect at n = 10000 matches the difference-in-means oracle") {
  const double tau0 = 1.7;
  const auto data = make_panel(
      10000, 21, [&](const Eigen::VectorXd&) { return tau0; }, 0.0);
  // Oracle target: with noise-free randomized data the difference in means
  // is the effect itself.
  const double oracle = difference_in_means(data);
  CHECK(oracle == doctest::Approx(tau0).epsilon(1e-9));

  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(150, 9));
  const double mean_tau = mean_tau_over_training(model, data.X);
  CHECK(std::abs(mean_tau - tau0) < 0.05 * tau0);

  SUBCASE("random query points stay within 10% of the constant effect") {
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
      Eigen::VectorXd x(kNumCovariates);
      for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
      CHECK(std::abs(predict_tau(model, x).tau - tau0) < 0.1 * tau0);
    }
  }
}

TEST_CASE("two-stratum effect at n = 20000 recovers both strata") {
  const auto tau = [](const Eigen::VectorXd& x) {
    return x[kGdd] > 0.0 ? 2.0 : 0.5;
  };
  const auto data = make_panel(20000, 33, tau, 0.3);

  // Stratified difference-in-means oracle on the generated data.
  double s1_hi = 0, s0_hi = 0, s1_lo = 0, s0_lo = 0;
  int n1_hi = 0, n0_hi = 0, n1_lo = 0, n0_lo = 0;
  for (int i = 0; i < data.y.size(); ++i) {
    const bool hi = data.X(i, kGdd) > 0.0;
    const bool treated = data.w[static_cast<std::size_t>(i)] == 1;
    (hi ? (treated ? s1_hi : s0_hi) : (treated ? s1_lo : s0_lo)) += data.y[i];
    ++(hi ? (treated ? n1_hi : n0_hi) : (treated ? n1_lo : n0_lo));
  }
  const double dim_hi = s1_hi / n1_hi - s0_hi / n0_hi;
  const double dim_lo = s1_lo / n1_lo - s0_lo / n0_lo;
  CHECK(std::abs(dim_hi - 2.0) < 0.05);
  CHECK(std::abs(dim_lo - 0.5) < 0.05);

  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(150, 13));
  double sum_hi = 0, sum_lo = 0;
  int n_hi = 0, n_lo = 0;
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    const double t = predict_tau(model, data.X.row(i).transpose()).tau;
    if (data.X(i, kGdd) > 0.0) {
      sum_hi += t;
      ++n_hi;
    } else {
      sum_lo += t;
      ++n_lo;
    }
  }
  CHECK(std::abs(sum_hi / n_hi - 2.0) < 0.1 * 2.0);
  CHECK(std::abs(sum_lo / n_lo - 0.5) < 0.1 * 0.5);
}

TEST_CASE("single-arm data is rejected") {
  auto data = make_panel(
      100, 3, [](const Eigen::VectorXd&) { return 1.0; }, 0.1);
  for (auto& w : data.w) w = 1;
  CHECK_THROWS_AS(fit_causal_forest(data.X, data.w, data.y, test_config(10, 1)),
                  DataError);
}

TEST_CASE("too few samples for a causal forest") {
  ForestConfig cfg = test_config(10, 1);
  auto data = make_panel(
      4 * cfg.min_leaf - 1, 3, [](const Eigen::VectorXd&) { return 1.0; }, 0.1);
  CHECK_THROWS_AS(fit_causal_forest(data.X, data.w, data.y, cfg), DataError);
}

// ---------------------------------------------------------------------------
// Prediction behavior
// ---------------------------------------------------------------------------

TEST_CASE("extrapolation beyond the training hull is flagged, not fatal") {
  const auto data = make_panel(
      600, 5, [](const Eigen::VectorXd&) { return 1.0; }, 0.2);
  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(50, 5));

  const Eigen::VectorXd far = Eigen::VectorXd::Constant(kNumCovariates, 3.0);
  const auto pred = predict_tau(model, far);
  CHECK(std::isfinite(pred.tau));
  CHECK(pred.extrapolated);

  const auto inside = predict_tau(model, Eigen::VectorXd::Zero(kNumCovariates));
  CHECK_FALSE(inside.extrapolated);
}

TEST_CASE("propensity on a balanced design centers on one half") {
  const auto data = make_panel(
      3000, 6, [](const Eigen::VectorXd&) { return 1.0; }, 0.3);
  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(100, 17));
  Rng rng(4);
  // Individual queries carry forest noise on a Bernoulli target; the level
  // check is on the mean, with a sanity band per point.
  double sum = 0.0;
  const int n_queries = 200;
  for (int i = 0; i < n_queries; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    const double e = predict_propensity(model, x);
    CHECK(e >= 0.2);
    CHECK(e <= 0.8);
    sum += e;
  }
  CHECK(std::abs(sum / n_queries - 0.5) <= 0.05);
}

TEST_CASE("separable treatment gives extreme propensities") {
  Rng rng(14);
  const int n = 3000;
  Eigen::MatrixXd X(n, kNumCovariates);
  std::vector<int> w(static_cast<std::size_t>(n));
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kNumCovariates; ++k) X(i, k) = rng.uniform(-1.0, 1.0);
    w[static_cast<std::size_t>(i)] = X(i, kGdd) > 0.0 ? 1 : 0;
    y[i] = w[static_cast<std::size_t>(i)] * 1.0 + rng.normal(0.0, 0.2);
  }
  const auto model = fit_causal_forest(X, w, y, test_config(100, 3));
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    if (x[kGdd] < 0.3) continue;  // stay clear of the boundary
    CHECK(predict_propensity(model, x) > 0.9);
  }
}

TEST_CASE("pure-leaf prediction matches the leaf mean exactly") {
  // Two clusters on one feature, all other features constant: every tree
  // splits at the same point and each leaf is pure, so a training point's
  // prediction is its own leaf mean. Hand check on the regression forest
  // (the propensity model is exactly this estimator on the treatment).
  const int n = 8;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, kNumCovariates);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    X(i, kGdd) = i < 4 ? -1.0 : 1.0;
    w[i] = i < 4 ? 0.0 : 1.0;
  }
  ForestConfig cfg = test_config(12, 19);
  cfg.min_leaf = 2;
  cfg.mtry = kNumCovariates;       // the informative feature is always seen
  cfg.subsample_fraction = 1.0;    // every tree sees every sample
  const auto forest = fit_regression_forest(X, w, cfg);
  CHECK(forest.predict_row(X.row(0).transpose()) == doctest::Approx(0.0));
  CHECK(forest.predict_row(X.row(7).transpose()) == doctest::Approx(1.0));
}

// ---------------------------------------------------------------------------
// Trimming
// ---------------------------------------------------------------------------

TEST_CASE("propensity trimming is symmetric") {
  const std::vector<double> scores = {0.5, 0.95, 0.89};
  const auto result = trim_by_propensity(scores, 0.9);
  CHECK(result.kept == std::vector<int>{0, 2});
  CHECK(result.n_dropped_high == 1);
  CHECK(result.n_dropped_low == 0);

  const std::vector<double> balanced = {0.5, 0.5, 0.5};
  CHECK(trim_by_propensity(balanced, 0.9).kept.size() == 3);

  const std::vector<double> low_tail = {0.05, 0.5};
  const auto mirrored = trim_by_propensity(low_tail, 0.9);
  CHECK(mirrored.kept == std::vector<int>{1});
  CHECK(mirrored.n_dropped_low == 1);

  CHECK_THROWS_AS(trim_by_propensity(scores, 0.4), ConfigError);
  CHECK_THROWS_AS(trim_by_propensity(scores, 1.2), ConfigError);
}

// ---------------------------------------------------------------------------
// Determinism, seeds, weights
// ---------------------------------------------------------------------------

TEST_CASE("identical seed gives bit-identical predictions") {
  const auto data = make_panel(
      1500, 44, [](const Eigen::VectorXd& x) { return 1.0 + x[kGdd]; }, 0.4);
  const auto a = fit_causal_forest(data.X, data.w, data.y, test_config(40, 101));
  const auto b = fit_causal_forest(data.X, data.w, data.y, test_config(40, 101));
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    CHECK(predict_tau(a, x).tau == predict_tau(b, x).tau);  // exact
  }
}

TEST_CASE("predictions are independent of the thread count") {
  const auto data = make_panel(
      1200, 45, [](const Eigen::VectorXd& x) { return 1.0 + x[kEdd]; }, 0.4);
  ForestConfig one = test_config(40, 7);
  one.n_threads = 1;
  ForestConfig four = test_config(40, 7);
  four.n_threads = 4;
  const auto a = fit_causal_forest(data.X, data.w, data.y, one);
  const auto b = fit_causal_forest(data.X, data.w, data.y, four);
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    CHECK(predict_tau(a, x).tau == predict_tau(b, x).tau);
  }
}

TEST_CASE("two seeds agree on the constant effect within 5%") {
  const double tau0 = 1.0;
  const auto data = make_panel(
      4000, 46, [&](const Eigen::VectorXd&) { return tau0; }, 0.5);
  const auto a = fit_causal_forest(data.X, data.w, data.y, test_config(150, 1));
  const auto b = fit_causal_forest(data.X, data.w, data.y, test_config(150, 2));
  const double mean_a = mean_tau_over_training(a, data.X);
  const double mean_b = mean_tau_over_training(b, data.X);
  CHECK(std::abs(mean_a - mean_b) < 0.05 * tau0);
}

TEST_CASE("bias shrinks as the sample grows") {
  const double tau0 = 1.0;
  const auto small = make_panel(
      2000, 50, [&](const Eigen::VectorXd&) { return tau0; }, 0.8);
  const auto large = make_panel(
      10000, 50, [&](const Eigen::VectorXd&) { return tau0; }, 0.8);
  const auto model_small =
      fit_causal_forest(small.X, small.w, small.y, test_config(120, 3));
  const auto model_large =
      fit_causal_forest(large.X, large.w, large.y, test_config(120, 3));
  const double bias_small =
      std::abs(mean_tau_over_training(model_small, small.X) - tau0);
  const double bias_large =
      std::abs(mean_tau_over_training(model_large, large.X) - tau0);
  CHECK(bias_large < bias_small);
}

TEST_CASE("forest weights are a probability distribution") {
  const auto data = make_panel(
      800, 60, [](const Eigen::VectorXd& x) { return x[kGdd]; }, 0.3);
  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(50, 23));
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    const Eigen::VectorXd alpha = forest_weights(model, x);
    CHECK(alpha.minCoeff() >= 0.0);
    CHECK(alpha.sum() == doctest::Approx(1.0).epsilon(1e-9));

    // The weighted residual-on-residual form agrees with predict_tau.
    double num = 0.0, den = 0.0;
    for (int i = 0; i < model.n_train; ++i) {
      num += alpha[i] * model.w_tilde[i] * model.y_tilde[i];
      den += alpha[i] * model.w_tilde[i] * model.w_tilde[i];
    }
    CHECK(predict_tau(model, x).tau == doctest::Approx(num / den).epsilon(1e-9));
  }
}

TEST_CASE("model serialization round trip preserves predictions") {
  const auto data = make_panel(
      600, 70, [](const Eigen::VectorXd& x) { return 0.5 + x[kEdd]; }, 0.3);
  const auto model =
      fit_causal_forest(data.X, data.w, data.y, test_config(30, 31));
  const auto j = model.to_json();
  const auto restored = CausalForestModel::from_json(j);
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x(kNumCovariates);
    for (int k = 0; k < kNumCovariates; ++k) x[k] = rng.uniform(-1.0, 1.0);
    CHECK(predict_tau(model, x).tau == predict_tau(restored, x).tau);
    CHECK(predict_propensity(model, x) == predict_propensity(restored, x));
  }
  CHECK(restored.config.seed == model.config.seed);
}
