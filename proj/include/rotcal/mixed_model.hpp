#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace rotcal {

// Crossed random-intercept model
//   y = X beta + Z_g u_g + Z_h u_h + eps,
// u_g ~ N(0, s2_g I), u_h ~ N(0, s2_h I), eps ~ N(0, s2_e I), all independent.
// Variance components are estimated by REML on the log scale with a
// quasi-Newton (BFGS) optimizer and numerically differentiated gradients;
// fixed effects are profiled out by generalized least squares per iterate.
struct MixedModelSpec {
  Eigen::MatrixXd X;           // n x p fixed-effects design
  Eigen::VectorXd y;           // n
  std::vector<int> group_g;    // first random factor index per row (-1 = none)
  std::vector<int> group_h;    // second random factor index per row (-1 = none)
  int n_g = 0;                 // number of levels (0 disables the factor)
  int n_h = 0;
};

struct MixedModelOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;
  // Components at the log-scale floor exp(-12) are reported as zero.
  double log_floor = -12.0;
};

struct MixedModelFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov_beta;    // GLS covariance at the REML optimum
  double var_g = 0.0;          // sigma^2 for the first factor
  double var_h = 0.0;
  double var_resid = 0.0;
  double reml_log_likelihood = 0.0;  // up to an additive constant
  bool converged = false;
  int n_iterations = 0;
  std::vector<double> objective_trace;  // -2 log restricted likelihood
  Eigen::VectorXd blup_g;      // posterior means of the random intercepts
  Eigen::VectorXd blup_h;
};

// Throws NumericError on non-convergence (the message carries the trace) and
// DataError on a singular fixed-effects design.
MixedModelFit fit_mixed_model(const MixedModelSpec& spec,
                              const MixedModelOptions& options = {});

// Generalized least squares with fixed variance components; used directly by
// validation variants and as the inner solver of the REML iterations.
struct GlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov_beta;
  double neg2_restricted_loglik = 0.0;
  Eigen::VectorXd blup_g, blup_h;
};

GlsResult gls_solve(const MixedModelSpec& spec, double var_g, double var_h,
                    double var_resid);

}  // namespace rotcal
