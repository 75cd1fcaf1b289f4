#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcal/types.hpp"

namespace rotcal {

struct ForestConfig {
  int n_trees = 500;
  int min_leaf = 5;
  int mtry = 4;  // ceil(sqrt(13))
  double subsample_fraction = 0.5;
  double honesty_fraction = 0.5;  // share of each subsample used for splits
  std::uint64_t seed = 42;
  int n_threads = 1;

  void validate() const;  // throws ConfigError
  nlohmann::ordered_json to_json() const;
  static ForestConfig from_json(const nlohmann::json& j);
};

struct TrainingSample {
  Covariates x;
  int w = 0;  // 1 = rotated, 0 = continuous
  double y = 0.0;
};

// ---------------------------------------------------------------------------
// Tree nodes live in one contiguous array; feature == -1 marks a leaf whose
// payload indexes a per-tree leaf table (or the leaf-mean list).
// ---------------------------------------------------------------------------

struct TreeNodes {
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int payload = -1;
  };
  std::vector<Node> nodes;

  int add_internal(int f, double thr) {
    nodes.push_back({f, thr, -1, -1, -1});
    return static_cast<int>(nodes.size()) - 1;
  }
  int add_leaf(int payload_index) {
    nodes.push_back({-1, 0.0, -1, -1, payload_index});
    return static_cast<int>(nodes.size()) - 1;
  }
  int size() const { return static_cast<int>(nodes.size()); }

  // Index of the leaf containing x (descends "x <= threshold goes left").
  template <typename Vec>
  int find_leaf(const Vec& x) const {
    const Node* node = nodes.data();
    while (node->feature >= 0)
      node = nodes.data() +
             (x[node->feature] <= node->threshold ? node->left : node->right);
    return static_cast<int>(node - nodes.data());
  }

  // Leaf payload for x; the hot path of batch prediction.
  int find_payload(const double* x) const {
    const Node* node = nodes.data();
    while (node->feature >= 0)
      node = nodes.data() +
             (x[node->feature] <= node->threshold ? node->left : node->right);
    return node->payload;
  }
};

struct RegressionTree {
  TreeNodes nodes;
  std::vector<double> leaf_mean;
  std::vector<int> in_bag;  // training rows used by this tree (sorted)
};

struct RegressionForest {
  ForestConfig config;
  std::vector<RegressionTree> trees;
  Eigen::VectorXd oob_prediction;  // one entry per training row
  int n_train = 0;

  double predict_row(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& X) const;
};

// Variance-reducing CART ensemble on subsamples without replacement, with
// out-of-bag predictions for every training row.
RegressionForest fit_regression_forest(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                       const Eigen::Ref<const Eigen::VectorXd>& y,
                                       const ForestConfig& config);

// ---------------------------------------------------------------------------
// Honest causal forest
// ---------------------------------------------------------------------------

struct HonestLeaf {
  double mean_wy = 0.0;   // mean over estimation samples of w_tilde * y_tilde
  double mean_ww = 0.0;   // mean over estimation samples of w_tilde^2
  std::vector<int> samples;  // estimation-half training rows in this leaf
};

struct CausalTree {
  TreeNodes nodes;
  std::vector<HonestLeaf> leaves;
};

struct CausalForestModel {
  ForestConfig config;
  Crop crop = Crop::corn;
  int n_train = 0;
  RegressionForest outcome_model;     // m_hat(x) = E[Y | X = x]
  RegressionForest propensity_model;  // e_hat(x) = E[W | X = x]
  std::vector<CausalTree> effect_trees;
  Eigen::VectorXd w_tilde;  // w - e_hat_oob, per training row
  Eigen::VectorXd y_tilde;  // y - m_hat_oob, per training row
  Eigen::VectorXd feature_min, feature_max;  // training hull per covariate
  std::vector<std::string> warnings;         // e.g. skipped degenerate trees

  nlohmann::ordered_json to_json() const;
  static CausalForestModel from_json(const nlohmann::json& j);
};

CausalForestModel fit_causal_forest(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    const std::vector<int>& w,
                                    const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const ForestConfig& config,
                                    Crop crop = Crop::corn);

CausalForestModel fit_causal_forest(const std::vector<TrainingSample>& samples,
                                    const ForestConfig& config,
                                    Crop crop = Crop::corn);

struct TauPrediction {
  double tau = 0.0;
  bool extrapolated = false;  // x falls outside the training hull
};

// Forest-weighted residual-on-residual estimate at x. Throws NumericError
// when the weighted treatment-residual mass at x is zero (no overlap).
TauPrediction predict_tau(const CausalForestModel& model,
                          const Eigen::Ref<const Eigen::VectorXd>& x);

Eigen::VectorXd predict_tau_batch(const CausalForestModel& model,
                                  const Eigen::Ref<const Eigen::MatrixXd>& X);

// Propensity from the centering forest, clamped to [0, 1].
double predict_propensity(const CausalForestModel& model,
                          const Eigen::Ref<const Eigen::VectorXd>& x);

// Per-training-row forest weights alpha_i(x); nonnegative and summing to one.
// This is the estimator's defining object; tests assert the invariants on it.
Eigen::VectorXd forest_weights(const CausalForestModel& model,
                               const Eigen::Ref<const Eigen::VectorXd>& x);

struct TrimResult {
  std::vector<int> kept;  // indices into the score sequence
  int n_dropped_high = 0;
  int n_dropped_low = 0;
};

// Drops rows with score >= threshold or score <= 1 - threshold.
TrimResult trim_by_propensity(std::span<const double> scores,
                              double threshold = 0.9);

}  // namespace rotcal
