#include "rotcal/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>

#include "rotcal/errors.hpp"
#include "rotcal/rng.hpp"

namespace rotcal {

namespace {

// Distinct sub-stream labels for the three sub-forests of a causal fit.
constexpr std::uint64_t kOutcomeStream = 0x6d68617400000000ull;     // "mhat"
constexpr std::uint64_t kPropensityStream = 0x6568617400000000ull;  // "ehat"
constexpr std::uint64_t kEffectStream = 0x7461750000000000ull;      // "tau"

void run_tree_jobs(int n_trees, int n_threads,
                   const std::function<void(int)>& job) {
  if (n_threads <= 1) {
    for (int t = 0; t < n_trees; ++t) job(t);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const int t = next.fetch_add(1);
      if (t >= n_trees) return;
      try {
        job(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min(n_threads, n_trees);
  pool.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct BestSplit {
  double score = -std::numeric_limits<double>::infinity();
  int feature = -1;
  double threshold = 0.0;
  bool valid() const { return feature >= 0; }
};

// Candidate thresholds come from midpoints between adjacent distinct values;
// nudged down when the midpoint rounds onto the right value so that
// "x <= threshold" reproduces the scanned partition exactly.
double safe_threshold(double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  return mid < hi ? mid : lo;
}

// Rows of one tree, kept sorted per feature for the whole build: sorted once
// up front, then stable-partitioned at each split so every node segment
// stays ordered. Entries carry (value, row), so scans and partitions run on
// contiguous memory and the covariate matrix is only read during init.
class SortedColumns {
 public:
  using Entry = std::pair<double, int>;  // (feature value, row id)

  void init(const Eigen::Ref<const Eigen::MatrixXd>& X,
            const std::vector<int>& rows) {
    for (int f = 0; f < kNumCovariates; ++f) {
      auto& col = cols_[static_cast<std::size_t>(f)];
      col.clear();
      col.reserve(rows.size());
      for (const int r : rows) col.emplace_back(X(r, f), r);
      std::sort(col.begin(), col.end());
    }
  }

  // Derives a subsample's sorted columns from forest-wide presorted columns
  // by a linear membership filter: no per-tree sorting.
  void init_filtered(const SortedColumns& global,
                     const std::vector<int>& rows, int n_total) {
    membership_.assign(static_cast<std::size_t>(n_total), 0);
    for (const int r : rows) membership_[static_cast<std::size_t>(r)] = 1;
    for (int f = 0; f < kNumCovariates; ++f) {
      auto& col = cols_[static_cast<std::size_t>(f)];
      col.clear();
      col.reserve(rows.size());
      for (const Entry& entry : global.column(f)) {
        if (membership_[static_cast<std::size_t>(entry.second)])
          col.push_back(entry);
      }
    }
  }

  const std::vector<Entry>& column(int f) const {
    return cols_[static_cast<std::size_t>(f)];
  }

  // Partitions every feature segment [begin, end) by the mask; the mask is
  // indexed by row id. Returns the left-side count (identical per feature).
  int partition(int begin, int end, const std::vector<char>& go_left) {
    int mid = begin;
    for (int f = 0; f < kNumCovariates; ++f) {
      auto& col = cols_[static_cast<std::size_t>(f)];
      scratch_.clear();
      int write = begin;
      for (int i = begin; i < end; ++i) {
        const Entry entry = col[static_cast<std::size_t>(i)];
        if (go_left[static_cast<std::size_t>(entry.second)]) {
          col[static_cast<std::size_t>(write++)] = entry;
        } else {
          scratch_.push_back(entry);
        }
      }
      std::copy(scratch_.begin(), scratch_.end(), col.begin() + write);
      mid = write;
    }
    return mid;
  }

 private:
  std::array<std::vector<Entry>, kNumCovariates> cols_;
  std::vector<Entry> scratch_;
  std::vector<char> membership_;
};

// ---------------------------------------------------------------------------
// Regression trees
// ---------------------------------------------------------------------------

class RegressionTreeBuilder {
 public:
  RegressionTreeBuilder(const Eigen::Ref<const Eigen::MatrixXd>& X,
                        const Eigen::Ref<const Eigen::VectorXd>& y,
                        const SortedColumns& global, const ForestConfig& config,
                        Rng rng)
      : X_(X), y_(y), global_(global), config_(config), rng_(rng) {
    go_left_.resize(static_cast<std::size_t>(X.rows()), 0);
  }

  RegressionTree build(std::vector<int> rows) {
    tree_.in_bag = rows;
    std::sort(tree_.in_bag.begin(), tree_.in_bag.end());
    columns_.init_filtered(global_, rows, static_cast<int>(X_.rows()));
    grow(0, static_cast<int>(rows.size()));
    return std::move(tree_);
  }

 private:
  int make_leaf(int begin, int end) {
    const auto& col = columns_.column(0);
    double sum = 0.0;
    for (int i = begin; i < end; ++i)
      sum += y_[col[static_cast<std::size_t>(i)].second];
    tree_.leaf_mean.push_back(sum / (end - begin));
    return tree_.nodes.add_leaf(static_cast<int>(tree_.leaf_mean.size()) - 1);
  }

  int grow(int begin, int end) {
    const int n = end - begin;
    if (n < 2 * config_.min_leaf) return make_leaf(begin, end);

    const auto& any_col = columns_.column(0);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = begin; i < end; ++i) {
      const double v = y_[any_col[static_cast<std::size_t>(i)].second];
      sum += v;
      sum_sq += v * v;
    }
    if (sum_sq - sum * sum / n <= 1e-12 * std::max(1.0, sum_sq))
      return make_leaf(begin, end);  // effectively constant target

    std::vector<int> features =
        sample_without_replacement(kNumCovariates, config_.mtry, rng_);
    std::sort(features.begin(), features.end());

    const double parent_score = sum * sum / n;
    BestSplit best;
    for (const int f : features) {
      const auto& col = columns_.column(f);
      double left_sum = 0.0;
      double prev_value = col[static_cast<std::size_t>(begin)].first;
      for (int j = 1; j < n; ++j) {
        left_sum += y_[col[static_cast<std::size_t>(begin + j - 1)].second];
        const double value = col[static_cast<std::size_t>(begin + j)].first;
        if (prev_value >= value) continue;
        const double lo = prev_value;
        prev_value = value;
        if (j < config_.min_leaf || n - j < config_.min_leaf) continue;
        const double right_sum = sum - left_sum;
        const double score =
            left_sum * left_sum / j + right_sum * right_sum / (n - j);
        if (score > best.score) {
          best.score = score;
          best.feature = f;
          best.threshold = safe_threshold(lo, value);
        }
      }
    }

    if (!best.valid() ||
        best.score <= parent_score + 1e-10 * std::max(1.0, std::abs(parent_score)))
      return make_leaf(begin, end);

    const auto& split_col = columns_.column(best.feature);
    for (int i = begin; i < end; ++i) {
      const auto& entry = split_col[static_cast<std::size_t>(i)];
      go_left_[static_cast<std::size_t>(entry.second)] =
          entry.first <= best.threshold ? 1 : 0;
    }
    const int mid = columns_.partition(begin, end, go_left_);
    const int node = tree_.nodes.add_internal(best.feature, best.threshold);
    const int left = grow(begin, mid);
    const int right = grow(mid, end);
    tree_.nodes.nodes[static_cast<std::size_t>(node)].left = left;
    tree_.nodes.nodes[static_cast<std::size_t>(node)].right = right;
    return node;
  }

  const Eigen::Ref<const Eigen::MatrixXd>& X_;
  const Eigen::Ref<const Eigen::VectorXd>& y_;
  const SortedColumns& global_;
  const ForestConfig& config_;
  Rng rng_;
  RegressionTree tree_;
  SortedColumns columns_;
  std::vector<char> go_left_;
};

double predict_tree(const RegressionTree& tree,
                    const Eigen::Ref<const Eigen::VectorXd>& x) {
  return tree.leaf_mean[static_cast<std::size_t>(
      tree.nodes.nodes[static_cast<std::size_t>(tree.nodes.find_leaf(x))]
          .payload)];
}

// Row-major copy of the covariate matrix: batch traversals walk one tree at
// a time over contiguous rows.
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
row_major(const Eigen::Ref<const Eigen::MatrixXd>& X) {
  return X;
}

// ---------------------------------------------------------------------------
// Honest causal trees
// ---------------------------------------------------------------------------

struct CausalTreeInputs {
  const Eigen::Ref<const Eigen::MatrixXd>& X;
  const Eigen::VectorXd& w_tilde;
  const Eigen::VectorXd& y_tilde;
  const std::vector<int>& w;
};

class CausalTreeBuilder {
 public:
  CausalTreeBuilder(const CausalTreeInputs& in, const SortedColumns& global,
                    const ForestConfig& config, Rng rng)
      : in_(in), global_(global), config_(config), rng_(rng) {
    go_left_.resize(static_cast<std::size_t>(in.X.rows()), 0);
    rho_.resize(static_cast<std::size_t>(in.X.rows()), 0.0);
  }

  // Returns false (tree skipped) when the subsample is degenerate.
  bool build(std::vector<int> structure, std::vector<int> estimation,
             CausalTree& out, std::string& warning) {
    if (static_cast<int>(estimation.size()) < config_.min_leaf) {
      warning = "estimation half smaller than min_leaf";
      return false;
    }
    int arm1 = 0;
    for (const int i : estimation) arm1 += in_.w[i];
    if (arm1 == 0 || arm1 == static_cast<int>(estimation.size())) {
      warning = "estimation half has a single treatment arm";
      return false;
    }
    double ww = 0.0;
    for (const int i : structure) ww += in_.w_tilde[i] * in_.w_tilde[i];
    if (ww <= 0.0) {
      warning = "all treatment residuals zero in subsample";
      return false;
    }
    const int n_total = static_cast<int>(X_.rows());
    st_cols_.init_filtered(global_, structure, n_total);
    est_cols_.init_filtered(global_, estimation, n_total);
    grow(0, static_cast<int>(structure.size()), 0,
         static_cast<int>(estimation.size()));
    out = std::move(tree_);
    return true;
  }

 private:
  int make_leaf(int est_begin, int est_end) {
    HonestLeaf leaf;
    const auto& col = est_cols_.column(0);
    leaf.samples.reserve(static_cast<std::size_t>(est_end - est_begin));
    for (int i = est_begin; i < est_end; ++i)
      leaf.samples.push_back(col[static_cast<std::size_t>(i)].second);
    std::sort(leaf.samples.begin(), leaf.samples.end());
    double wy = 0.0, ww = 0.0;
    for (const int i : leaf.samples) {
      wy += in_.w_tilde[i] * in_.y_tilde[i];
      ww += in_.w_tilde[i] * in_.w_tilde[i];
    }
    const double n = static_cast<double>(leaf.samples.size());
    leaf.mean_wy = wy / n;
    leaf.mean_ww = ww / n;
    tree_.leaves.push_back(std::move(leaf));
    return tree_.nodes.add_leaf(static_cast<int>(tree_.leaves.size()) - 1);
  }

  int grow(int st_begin, int st_end, int est_begin, int est_end) {
    const int ns = st_end - st_begin;
    const int ne = est_end - est_begin;
    if (ns < 2 * config_.min_leaf || ne < 2 * config_.min_leaf)
      return make_leaf(est_begin, est_end);

    // Node effect estimate from structure samples; pseudo-outcomes are the
    // per-sample influence of tau, normalized by the mean residual mass.
    const auto& st0 = st_cols_.column(0);
    double sum_ww = 0.0, sum_wy = 0.0;
    for (int i = st_begin; i < st_end; ++i) {
      const int r = st0[static_cast<std::size_t>(i)].second;
      sum_ww += in_.w_tilde[r] * in_.w_tilde[r];
      sum_wy += in_.w_tilde[r] * in_.y_tilde[r];
    }
    if (sum_ww <= 1e-14) return make_leaf(est_begin, est_end);
    const double tau_node = sum_wy / sum_ww;
    const double mean_ww = sum_ww / ns;

    double rho_total = 0.0;
    for (int i = st_begin; i < st_end; ++i) {
      const int r = st0[static_cast<std::size_t>(i)].second;
      const double v =
          in_.w_tilde[r] * (in_.y_tilde[r] - in_.w_tilde[r] * tau_node) / mean_ww;
      rho_[static_cast<std::size_t>(r)] = v;
      rho_total += v;
    }

    std::vector<int> features =
        sample_without_replacement(kNumCovariates, config_.mtry, rng_);
    std::sort(features.begin(), features.end());

    BestSplit best;
    for (const int f : features) {
      const auto& st_col = st_cols_.column(f);
      const auto& est_col = est_cols_.column(f);
      int est_arm1_total = 0;
      for (int i = est_begin; i < est_end; ++i)
        est_arm1_total += in_.w[est_col[static_cast<std::size_t>(i)].second];

      double left_rho = 0.0;
      double prev_value = st_col[static_cast<std::size_t>(st_begin)].first;
      int pe = 0;        // estimation rows with value <= current threshold
      int pe_arm1 = 0;
      for (int j = 1; j < ns; ++j) {
        left_rho += rho_[static_cast<std::size_t>(
            st_col[static_cast<std::size_t>(st_begin + j - 1)].second)];
        const double value =
            st_col[static_cast<std::size_t>(st_begin + j)].first;
        if (prev_value >= value) continue;
        const double lo = prev_value;
        prev_value = value;
        if (j < config_.min_leaf || ns - j < config_.min_leaf) continue;
        const double thr = safe_threshold(lo, value);
        while (pe < ne &&
               est_col[static_cast<std::size_t>(est_begin + pe)].first <= thr) {
          pe_arm1 += in_.w[est_col[static_cast<std::size_t>(est_begin + pe)].second];
          ++pe;
        }
        // Honest constraints: enough estimation samples and both arms on
        // each side, so every leaf can produce an effect estimate.
        if (pe < config_.min_leaf || ne - pe < config_.min_leaf) continue;
        const int right_arm1 = est_arm1_total - pe_arm1;
        if (pe_arm1 == 0 || pe_arm1 == pe) continue;
        if (right_arm1 == 0 || right_arm1 == ne - pe) continue;

        const double right_rho = rho_total - left_rho;
        const double score =
            left_rho * left_rho / j + right_rho * right_rho / (ns - j);
        if (score > best.score) {
          best.score = score;
          best.feature = f;
          best.threshold = thr;
        }
      }
    }

    const double parent_score = rho_total * rho_total / ns;
    if (!best.valid() ||
        best.score <= parent_score + 1e-10 * std::max(1.0, std::abs(parent_score)))
      return make_leaf(est_begin, est_end);

    const auto& st_split = st_cols_.column(best.feature);
    for (int i = st_begin; i < st_end; ++i) {
      const auto& entry = st_split[static_cast<std::size_t>(i)];
      go_left_[static_cast<std::size_t>(entry.second)] =
          entry.first <= best.threshold ? 1 : 0;
    }
    const auto& est_split = est_cols_.column(best.feature);
    for (int i = est_begin; i < est_end; ++i) {
      const auto& entry = est_split[static_cast<std::size_t>(i)];
      go_left_[static_cast<std::size_t>(entry.second)] =
          entry.first <= best.threshold ? 1 : 0;
    }
    const int st_mid = st_cols_.partition(st_begin, st_end, go_left_);
    const int est_mid = est_cols_.partition(est_begin, est_end, go_left_);
    const int node = tree_.nodes.add_internal(best.feature, best.threshold);
    const int left = grow(st_begin, st_mid, est_begin, est_mid);
    const int right = grow(st_mid, st_end, est_mid, est_end);
    tree_.nodes.nodes[static_cast<std::size_t>(node)].left = left;
    tree_.nodes.nodes[static_cast<std::size_t>(node)].right = right;
    return node;
  }

  const CausalTreeInputs& in_;
  const SortedColumns& global_;
  const ForestConfig& config_;
  const Eigen::Ref<const Eigen::MatrixXd>& X_ = in_.X;
  Rng rng_;
  CausalTree tree_;
  SortedColumns st_cols_;
  SortedColumns est_cols_;
  std::vector<char> go_left_;
  std::vector<double> rho_;  // indexed by row id, valid within the live node
};

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ForestConfig::validate() const {
  if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
  if (min_leaf < 1) throw ConfigError("min_leaf must be >= 1");
  if (mtry < 1 || mtry > kNumCovariates)
    throw ConfigError("mtry must be in [1, 13]");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ConfigError("subsample_fraction must be in (0, 1]");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0))
    throw ConfigError("honesty_fraction must be in (0, 1)");
  if (n_threads < 1) throw ConfigError("n_threads must be >= 1");
}

nlohmann::ordered_json ForestConfig::to_json() const {
  return {{"n_trees", n_trees},
          {"min_leaf", min_leaf},
          {"mtry", mtry},
          {"subsample_fraction", subsample_fraction},
          {"honesty_fraction", honesty_fraction},
          {"seed", seed}};
}

ForestConfig ForestConfig::from_json(const nlohmann::json& j) {
  ForestConfig cfg;
  cfg.n_trees = j.at("n_trees").get<int>();
  cfg.min_leaf = j.at("min_leaf").get<int>();
  cfg.mtry = j.at("mtry").get<int>();
  cfg.subsample_fraction = j.at("subsample_fraction").get<double>();
  cfg.honesty_fraction = j.at("honesty_fraction").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

// ---------------------------------------------------------------------------
// Regression forest
// ---------------------------------------------------------------------------

double RegressionForest::predict_row(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  double sum = 0.0;
  for (const auto& tree : trees) sum += predict_tree(tree, x);
  return sum / static_cast<double>(trees.size());
}

Eigen::VectorXd RegressionForest::predict(
    const Eigen::Ref<const Eigen::MatrixXd>& X) const {
  const auto rows = row_major(X);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  for (const auto& tree : trees) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const int payload = tree.nodes.find_payload(rows.data() + i * kNumCovariates);
      out[i] += tree.leaf_mean[static_cast<std::size_t>(payload)];
    }
  }
  return out / static_cast<double>(trees.size());
}

RegressionForest fit_regression_forest(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                       const Eigen::Ref<const Eigen::VectorXd>& y,
                                       const ForestConfig& config) {
  config.validate();
  const int n = static_cast<int>(X.rows());
  if (X.cols() != kNumCovariates)
    throw DataError("expected " + std::to_string(kNumCovariates) +
                    " covariate columns");
  if (n != y.size()) throw DataError("X and y row counts differ");
  if (n < 2 * config.min_leaf)
    throw DataError("need at least 2*min_leaf = " +
                    std::to_string(2 * config.min_leaf) + " samples, got " +
                    std::to_string(n));

  RegressionForest forest;
  forest.config = config;
  forest.n_train = n;
  forest.trees.resize(static_cast<std::size_t>(config.n_trees));

  const int subsample =
      std::max(2 * config.min_leaf,
               static_cast<int>(std::ceil(config.subsample_fraction * n)));

  SortedColumns global_columns;
  {
    std::vector<int> all_rows(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all_rows[static_cast<std::size_t>(i)] = i;
    global_columns.init(X, all_rows);
  }

  run_tree_jobs(config.n_trees, config.n_threads, [&](int t) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
    std::vector<int> rows =
        sample_without_replacement(n, std::min(subsample, n), rng);
    RegressionTreeBuilder builder(X, y, global_columns, config, rng);
    forest.trees[static_cast<std::size_t>(t)] = builder.build(std::move(rows));
  });

  // Out-of-bag predictions, accumulated in tree order.
  const auto rows = row_major(X);
  Eigen::VectorXd oob_sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXi oob_count = Eigen::VectorXi::Zero(n);
  std::vector<char> in_bag(static_cast<std::size_t>(n));
  for (const auto& tree : forest.trees) {
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (const int i : tree.in_bag) in_bag[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < n; ++i) {
      if (in_bag[static_cast<std::size_t>(i)]) continue;
      const int payload = tree.nodes.find_payload(rows.data() + i * kNumCovariates);
      oob_sum[i] += tree.leaf_mean[static_cast<std::size_t>(payload)];
      oob_count[i] += 1;
    }
  }
  forest.oob_prediction.resize(n);
  for (int i = 0; i < n; ++i) {
    forest.oob_prediction[i] = oob_count[i] > 0
                                   ? oob_sum[i] / oob_count[i]
                                   : forest.predict_row(X.row(i).transpose());
  }
  return forest;
}

// ---------------------------------------------------------------------------
// Causal forest
// ---------------------------------------------------------------------------

CausalForestModel fit_causal_forest(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    const std::vector<int>& w,
                                    const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const ForestConfig& config, Crop crop) {
  config.validate();
  const int n = static_cast<int>(X.rows());
  if (n != static_cast<int>(w.size()) || n != y.size())
    throw DataError("X, w, y row counts differ");
  if (n < 4 * config.min_leaf)
    throw DataError("need at least 4*min_leaf samples for a causal forest");
  int treated = 0;
  for (const int wi : w) {
    if (wi != 0 && wi != 1) throw DataError("treatment must be 0 or 1");
    treated += wi;
  }
  if (treated == 0 || treated == n)
    throw DataError("both treatment arms must be non-empty");

  CausalForestModel model;
  model.config = config;
  model.crop = crop;
  model.n_train = n;
  model.feature_min = X.colwise().minCoeff();
  model.feature_max = X.colwise().maxCoeff();

  // Centering on out-of-bag predictions.
  Eigen::VectorXd w_real(n);
  for (int i = 0; i < n; ++i) w_real[i] = static_cast<double>(w[i]);
  ForestConfig sub = config;
  sub.seed = derive_seed(config.seed, kOutcomeStream);
  model.outcome_model = fit_regression_forest(X, y, sub);
  sub.seed = derive_seed(config.seed, kPropensityStream);
  model.propensity_model = fit_regression_forest(X, w_real, sub);

  model.y_tilde = y - model.outcome_model.oob_prediction;
  model.w_tilde = w_real - model.propensity_model.oob_prediction;

  const CausalTreeInputs inputs{X, model.w_tilde, model.y_tilde, w};
  const int subsample =
      std::max(4 * config.min_leaf,
               static_cast<int>(std::ceil(config.subsample_fraction * n)));

  std::vector<CausalTree> trees(static_cast<std::size_t>(config.n_trees));
  std::vector<std::string> tree_warnings(
      static_cast<std::size_t>(config.n_trees));
  std::vector<char> tree_ok(static_cast<std::size_t>(config.n_trees), 0);

  SortedColumns global_columns;
  {
    std::vector<int> all_rows(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all_rows[static_cast<std::size_t>(i)] = i;
    global_columns.init(X, all_rows);
  }

  run_tree_jobs(config.n_trees, config.n_threads, [&](int t) {
    Rng rng(derive_seed(derive_seed(config.seed, kEffectStream),
                        static_cast<std::uint64_t>(t)));
    std::vector<int> rows =
        sample_without_replacement(n, std::min(subsample, n), rng);
    const int n_structure = std::max(
        1, static_cast<int>(std::floor(config.honesty_fraction * rows.size())));
    std::vector<int> structure(rows.begin(), rows.begin() + n_structure);
    std::vector<int> estimation(rows.begin() + n_structure, rows.end());
    CausalTreeBuilder builder(inputs, global_columns, config, rng);
    tree_ok[static_cast<std::size_t>(t)] =
        builder.build(std::move(structure), std::move(estimation),
                      trees[static_cast<std::size_t>(t)],
                      tree_warnings[static_cast<std::size_t>(t)])
            ? 1
            : 0;
  });

  for (int t = 0; t < config.n_trees; ++t) {
    if (tree_ok[static_cast<std::size_t>(t)]) {
      model.effect_trees.push_back(std::move(trees[static_cast<std::size_t>(t)]));
    } else {
      model.warnings.push_back("tree " + std::to_string(t) + " skipped: " +
                               tree_warnings[static_cast<std::size_t>(t)]);
    }
  }
  if (model.effect_trees.empty())
    throw NumericError("all effect trees degenerate; cannot fit causal forest");
  return model;
}

CausalForestModel fit_causal_forest(const std::vector<TrainingSample>& samples,
                                    const ForestConfig& config, Crop crop) {
  const int n = static_cast<int>(samples.size());
  Eigen::MatrixXd X(n, kNumCovariates);
  Eigen::VectorXd y(n);
  std::vector<int> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    X.row(i) = samples[static_cast<std::size_t>(i)].x.transpose();
    y[i] = samples[static_cast<std::size_t>(i)].y;
    w[static_cast<std::size_t>(i)] = samples[static_cast<std::size_t>(i)].w;
  }
  return fit_causal_forest(X, w, y, config, crop);
}

TauPrediction predict_tau(const CausalForestModel& model,
                          const Eigen::Ref<const Eigen::VectorXd>& x) {
  double num = 0.0, den = 0.0;
  for (const auto& tree : model.effect_trees) {
    const auto& leaf = tree.leaves[static_cast<std::size_t>(
        tree.nodes.nodes[static_cast<std::size_t>(tree.nodes.find_leaf(x))]
            .payload)];
    num += leaf.mean_wy;
    den += leaf.mean_ww;
  }
  if (den <= 0.0)
    throw NumericError("no overlap at query point: zero treatment-residual mass");

  TauPrediction out;
  out.tau = num / den;
  for (int k = 0; k < kNumCovariates; ++k) {
    if (x[k] < model.feature_min[k] || x[k] > model.feature_max[k]) {
      out.extrapolated = true;
      break;
    }
  }
  return out;
}

Eigen::VectorXd predict_tau_batch(const CausalForestModel& model,
                                  const Eigen::Ref<const Eigen::MatrixXd>& X) {
  const auto rows = row_major(X);
  Eigen::VectorXd num = Eigen::VectorXd::Zero(X.rows());
  Eigen::VectorXd den = Eigen::VectorXd::Zero(X.rows());
  for (const auto& tree : model.effect_trees) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const int payload = tree.nodes.find_payload(rows.data() + i * kNumCovariates);
      const auto& leaf = tree.leaves[static_cast<std::size_t>(payload)];
      num[i] += leaf.mean_wy;
      den[i] += leaf.mean_ww;
    }
  }
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (den[i] <= 0.0)
      throw NumericError("no overlap at query row " + std::to_string(i));
  }
  return num.array() / den.array();
}

double predict_propensity(const CausalForestModel& model,
                          const Eigen::Ref<const Eigen::VectorXd>& x) {
  return std::clamp(model.propensity_model.predict_row(x), 0.0, 1.0);
}

Eigen::VectorXd forest_weights(const CausalForestModel& model,
                               const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(model.n_train);
  const double n_trees = static_cast<double>(model.effect_trees.size());
  for (const auto& tree : model.effect_trees) {
    const auto& leaf = tree.leaves[static_cast<std::size_t>(
        tree.nodes.nodes[static_cast<std::size_t>(tree.nodes.find_leaf(x))]
            .payload)];
    const double share = 1.0 / (n_trees * static_cast<double>(leaf.samples.size()));
    for (const int i : leaf.samples) alpha[i] += share;
  }
  return alpha;
}

TrimResult trim_by_propensity(std::span<const double> scores, double threshold) {
  if (!(threshold > 0.5 && threshold <= 1.0))
    throw ConfigError("trim threshold must be in (0.5, 1]");
  TrimResult result;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= threshold) {
      ++result.n_dropped_high;
    } else if (scores[i] <= 1.0 - threshold) {
      ++result.n_dropped_low;
    } else {
      result.kept.push_back(static_cast<int>(i));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization (versioned JSON, config embedded)
// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json nodes_to_json(const TreeNodes& nodes) {
  // Columnar on disk, struct-of-arrays in memory.
  std::vector<int> feature, left, right, payload;
  std::vector<double> threshold;
  for (const auto& node : nodes.nodes) {
    feature.push_back(node.feature);
    threshold.push_back(node.threshold);
    left.push_back(node.left);
    right.push_back(node.right);
    payload.push_back(node.payload);
  }
  return {{"feature", feature},
          {"threshold", threshold},
          {"left", left},
          {"right", right},
          {"payload", payload}};
}

TreeNodes nodes_from_json(const nlohmann::json& j) {
  const auto feature = j.at("feature").get<std::vector<int>>();
  const auto threshold = j.at("threshold").get<std::vector<double>>();
  const auto left = j.at("left").get<std::vector<int>>();
  const auto right = j.at("right").get<std::vector<int>>();
  const auto payload = j.at("payload").get<std::vector<int>>();
  TreeNodes nodes;
  nodes.nodes.resize(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i)
    nodes.nodes[i] = {feature[i], threshold[i], left[i], right[i], payload[i]};
  return nodes;
}

nlohmann::ordered_json regression_forest_to_json(const RegressionForest& forest) {
  nlohmann::ordered_json trees = nlohmann::ordered_json::array();
  for (const auto& tree : forest.trees) {
    trees.push_back({{"nodes", nodes_to_json(tree.nodes)},
                     {"leaf_mean", tree.leaf_mean}});
  }
  std::vector<double> oob(forest.oob_prediction.data(),
                          forest.oob_prediction.data() + forest.oob_prediction.size());
  return {{"config", forest.config.to_json()},
          {"n_train", forest.n_train},
          {"oob_prediction", oob},
          {"trees", trees}};
}

RegressionForest regression_forest_from_json(const nlohmann::json& j) {
  RegressionForest forest;
  forest.config = ForestConfig::from_json(j.at("config"));
  forest.n_train = j.at("n_train").get<int>();
  const auto oob = j.at("oob_prediction").get<std::vector<double>>();
  forest.oob_prediction =
      Eigen::Map<const Eigen::VectorXd>(oob.data(), static_cast<Eigen::Index>(oob.size()));
  for (const auto& tj : j.at("trees")) {
    RegressionTree tree;
    tree.nodes = nodes_from_json(tj.at("nodes"));
    tree.leaf_mean = tj.at("leaf_mean").get<std::vector<double>>();
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

}  // namespace

nlohmann::ordered_json CausalForestModel::to_json() const {
  nlohmann::ordered_json trees = nlohmann::ordered_json::array();
  for (const auto& tree : effect_trees) {
    nlohmann::ordered_json leaves = nlohmann::ordered_json::array();
    for (const auto& leaf : tree.leaves) {
      leaves.push_back({{"mean_wy", leaf.mean_wy},
                        {"mean_ww", leaf.mean_ww},
                        {"samples", leaf.samples}});
    }
    trees.push_back({{"nodes", nodes_to_json(tree.nodes)}, {"leaves", leaves}});
  }
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  return {{"format", "rotcal-causal-forest"},
          {"format_version", 1},
          {"crop", to_string(crop)},
          {"config", config.to_json()},
          {"n_train", n_train},
          {"feature_min", vec(feature_min)},
          {"feature_max", vec(feature_max)},
          {"w_tilde", vec(w_tilde)},
          {"y_tilde", vec(y_tilde)},
          {"outcome_model", regression_forest_to_json(outcome_model)},
          {"propensity_model", regression_forest_to_json(propensity_model)},
          {"effect_trees", trees},
          {"warnings", warnings}};
}

CausalForestModel CausalForestModel::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rotcal-causal-forest")
    throw DataError("not a causal forest model file");
  if (j.value("format_version", 0) != 1)
    throw DataError("unsupported model format version");

  CausalForestModel model;
  const auto crop = parse_crop(j.at("crop").get<std::string>());
  if (!crop) throw DataError("invalid crop in model file");
  model.crop = *crop;
  model.config = ForestConfig::from_json(j.at("config"));
  model.n_train = j.at("n_train").get<int>();
  auto vec = [](const nlohmann::json& arr) {
    const auto v = arr.get<std::vector<double>>();
    return Eigen::VectorXd(
        Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  model.feature_min = vec(j.at("feature_min"));
  model.feature_max = vec(j.at("feature_max"));
  model.w_tilde = vec(j.at("w_tilde"));
  model.y_tilde = vec(j.at("y_tilde"));
  model.outcome_model = regression_forest_from_json(j.at("outcome_model"));
  model.propensity_model = regression_forest_from_json(j.at("propensity_model"));
  for (const auto& tj : j.at("effect_trees")) {
    CausalTree tree;
    tree.nodes = nodes_from_json(tj.at("nodes"));
    for (const auto& lj : tj.at("leaves")) {
      HonestLeaf leaf;
      leaf.mean_wy = lj.at("mean_wy").get<double>();
      leaf.mean_ww = lj.at("mean_ww").get<double>();
      leaf.samples = lj.at("samples").get<std::vector<int>>();
      tree.leaves.push_back(std::move(leaf));
    }
    model.effect_trees.push_back(std::move(tree));
  }
  model.warnings = j.at("warnings").get<std::vector<std::string>>();
  return model;
}

}  // namespace rotcal
