#include "rotcal/mixed_model.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <sstream>

#include "rotcal/errors.hpp"

namespace rotcal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// The covariance V = s2_e I + U D U' has low-rank structure: U stacks the two
// group-indicator blocks and D their variances. Solves and determinants go
// through the (n_g + n_h)-dimensional inner matrix A = s2_e D^-1 + U'U, which
// keeps each REML objective evaluation at O(n m^2) instead of O(n^3).
// Components with zero variance are excluded from U entirely.
class WorkingModel {
 public:
  explicit WorkingModel(const MixedModelSpec& s)
      : spec_(s),
        n_(static_cast<int>(s.X.rows())),
        p_(static_cast<int>(s.X.cols())),
        m_(s.n_g + s.n_h) {
    utu_ = Eigen::MatrixXd::Zero(m_, m_);
    for (int i = 0; i < n_; ++i) {
      const int cg = spec_.n_g > 0 ? spec_.group_g[i] : -1;
      const int ch = spec_.n_h > 0 ? spec_.n_g + spec_.group_h[i] : -1;
      if (cg >= 0) utu_(cg, cg) += 1.0;
      if (ch >= 0) utu_(ch, ch) += 1.0;
      if (cg >= 0 && ch >= 0) {
        utu_(cg, ch) += 1.0;
        utu_(ch, cg) += 1.0;
      }
    }
  }

  // Evaluates the GLS quantities at fixed variances. On success fills `out`
  // and returns the -2 restricted log likelihood; returns +inf when the
  // factorization is numerically unusable at these variances; throws
  // DataError when the fixed-effects design itself is singular.
  double evaluate(double var_g, double var_h, double var_e, GlsResult& out) const {
    const bool use_g = spec_.n_g > 0 && var_g > 0.0;
    const bool use_h = spec_.n_h > 0 && var_h > 0.0;
    const int mg = use_g ? spec_.n_g : 0;
    const int mh = use_h ? spec_.n_h : 0;
    const int m = mg + mh;

    Eigen::MatrixXd b(n_, p_ + 1);
    b.leftCols(p_) = spec_.X;
    b.col(p_) = spec_.y;

    double logdet_v = n_ * std::log(var_e);
    Eigen::MatrixXd vinv_b;
    Eigen::LDLT<Eigen::MatrixXd> a_ldlt;
    if (m > 0) {
      Eigen::MatrixXd a(m, m);
      if (use_g && use_h) {
        a = utu_;
      } else if (use_g) {
        a = utu_.topLeftCorner(mg, mg);
      } else {
        a = utu_.bottomRightCorner(mh, mh);
      }
      for (int j = 0; j < mg; ++j) a(j, j) += var_e / var_g;
      for (int j = 0; j < mh; ++j) a(mg + j, mg + j) += var_e / var_h;
      a_ldlt.compute(a);
      if (a_ldlt.info() != Eigen::Success ||
          a_ldlt.vectorD().minCoeff() <= 0.0)
        return kInf;
      const Eigen::MatrixXd utb = ut_times(b, use_g, use_h, mg);
      vinv_b = (b - u_times(a_ldlt.solve(utb), p_ + 1, use_g, use_h, mg)) / var_e;
      logdet_v += mg * std::log(var_g) + mh * std::log(var_h) -
                  m * std::log(var_e) +
                  a_ldlt.vectorD().array().log().sum();
    } else {
      vinv_b = b / var_e;
    }

    const Eigen::MatrixXd xt_vinv_x = spec_.X.transpose() * vinv_b.leftCols(p_);
    const Eigen::VectorXd xt_vinv_y = spec_.X.transpose() * vinv_b.col(p_);
    Eigen::LDLT<Eigen::MatrixXd> xvx_ldlt(xt_vinv_x);
    const double dmax = xvx_ldlt.vectorD().maxCoeff();
    if (!std::isfinite(dmax)) return kInf;
    if (!(dmax > 0.0) || xvx_ldlt.vectorD().minCoeff() <= 1e-12 * dmax) {
      // A rank-deficient X gives a singular normal matrix at every variance.
      throw DataError(
          "singular fixed-effects design (is the calibration predictor "
          "constant?)");
    }

    out.beta = xvx_ldlt.solve(xt_vinv_y);
    out.cov_beta = xvx_ldlt.solve(Eigen::MatrixXd::Identity(p_, p_));

    const double y_vinv_y = spec_.y.dot(vinv_b.col(p_));
    const double quad = y_vinv_y - out.beta.dot(xt_vinv_y);
    const double logdet_xvx = xvx_ldlt.vectorD().array().log().sum();
    const double objective = logdet_v + logdet_xvx + quad;
    if (!std::isfinite(objective)) return kInf;
    out.neg2_restricted_loglik = objective;

    // BLUPs: u = D U' V^-1 (y - X beta); zero for inactive components.
    const Eigen::VectorXd vinv_r =
        vinv_b.col(p_) - vinv_b.leftCols(p_) * out.beta;
    out.blup_g = Eigen::VectorXd::Zero(spec_.n_g);
    out.blup_h = Eigen::VectorXd::Zero(spec_.n_h);
    if (m > 0) {
      const Eigen::VectorXd ut_vinv_r = ut_times(vinv_r, use_g, use_h, mg);
      if (use_g)
        for (int j = 0; j < mg; ++j) out.blup_g[j] = var_g * ut_vinv_r[j];
      if (use_h)
        for (int j = 0; j < mh; ++j) out.blup_h[j] = var_h * ut_vinv_r[mg + j];
    }
    return objective;
  }

  int n() const { return n_; }
  int p() const { return p_; }

 private:
  Eigen::MatrixXd ut_times(const Eigen::MatrixXd& b, bool use_g, bool use_h,
                           int mg) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(mg + (use_h ? spec_.n_h : 0),
                                                b.cols());
    for (int i = 0; i < n_; ++i) {
      if (use_g) out.row(spec_.group_g[i]) += b.row(i);
      if (use_h) out.row(mg + spec_.group_h[i]) += b.row(i);
    }
    return out;
  }

  Eigen::MatrixXd u_times(const Eigen::MatrixXd& c, Eigen::Index cols,
                          bool use_g, bool use_h, int mg) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_, cols);
    for (int i = 0; i < n_; ++i) {
      if (use_g) out.row(i) += c.row(spec_.group_g[i]);
      if (use_h) out.row(i) += c.row(mg + spec_.group_h[i]);
    }
    return out;
  }

  const MixedModelSpec& spec_;
  int n_, p_, m_;
  Eigen::MatrixXd utu_;
};

}  // namespace

GlsResult gls_solve(const MixedModelSpec& spec, double var_g, double var_h,
                    double var_resid) {
  WorkingModel model(spec);
  GlsResult out;
  if (!std::isfinite(model.evaluate(var_g, var_h, var_resid, out)))
    throw NumericError("GLS evaluation is numerically unstable at the given "
                       "variance components");
  return out;
}

MixedModelFit fit_mixed_model(const MixedModelSpec& spec,
                              const MixedModelOptions& options) {
  const int n = static_cast<int>(spec.X.rows());
  const int p = static_cast<int>(spec.X.cols());
  if (n != spec.y.size()) throw DataError("mixed model: X and y sizes differ");
  if (n <= p) throw DataError("mixed model: more fixed effects than rows");
  if (spec.n_g > 0 && static_cast<int>(spec.group_g.size()) != n)
    throw DataError("mixed model: group_g size mismatch");
  if (spec.n_h > 0 && static_cast<int>(spec.group_h.size()) != n)
    throw DataError("mixed model: group_h size mismatch");

  WorkingModel model(spec);

  // theta holds log-variances of the active components, residual last.
  const bool use_g = spec.n_g > 0;
  const bool use_h = spec.n_h > 0;
  const int dim = 1 + (use_g ? 1 : 0) + (use_h ? 1 : 0);
  const double lo = options.log_floor;

  auto unpack = [&](const Eigen::VectorXd& theta, double& vg, double& vh,
                    double& ve) {
    int k = 0;
    vg = use_g ? std::exp(theta[k++]) : 0.0;
    vh = use_h ? std::exp(theta[k++]) : 0.0;
    ve = std::exp(theta[k]);
  };

  auto objective = [&](const Eigen::VectorXd& theta, GlsResult& gls) {
    double vg, vh, ve;
    unpack(theta, vg, vh, ve);
    return model.evaluate(vg, vh, ve, gls);
  };

  // Start from the OLS residual variance split across components; the upper
  // bound scales with the data so line searches cannot wander into
  // pathological variance ratios.
  Eigen::VectorXd theta(dim);
  double hi;
  {
    GlsResult ols;
    if (!std::isfinite(model.evaluate(0.0, 0.0, 1.0, ols)))
      throw NumericError("initial OLS pass failed");
    const Eigen::VectorXd resid = spec.y - spec.X * ols.beta;
    double v = resid.squaredNorm() / std::max(1, n - p);
    if (!(v > 1e-10)) v = 1e-10;
    hi = std::log(v * 1e5);
    int k = 0;
    if (use_g) theta[k++] = std::clamp(std::log(v / 4.0), lo, hi);
    if (use_h) theta[k++] = std::clamp(std::log(v / 4.0), lo, hi);
    theta[k] = std::clamp(std::log(v / 2.0), lo, hi);
  }

  auto project = [&](Eigen::VectorXd t) {
    for (int k = 0; k < dim; ++k) t[k] = std::clamp(t[k], lo, hi);
    return t;
  };

  GlsResult gls;
  double f = objective(theta, gls);
  if (!std::isfinite(f)) throw NumericError("REML objective undefined at start");

  auto gradient = [&](const Eigen::VectorXd& at) {
    Eigen::VectorXd g(dim);
    GlsResult scratch;
    const double h = 1e-5;
    for (int k = 0; k < dim; ++k) {
      Eigen::VectorXd tp = at, tm = at;
      tp[k] = std::min(at[k] + h, hi);
      tm[k] = std::max(at[k] - h, lo);
      const double fp = objective(tp, scratch);
      const double fm = objective(tm, scratch);
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g[k] = (fp - fm) / (tp[k] - tm[k]);
      } else if (std::isfinite(fm)) {
        g[k] = 1.0;  // push down, away from the unstable side
      } else if (std::isfinite(fp)) {
        g[k] = -1.0;
      } else {
        g[k] = 0.0;
      }
    }
    return g;
  };

  MixedModelFit fit;
  fit.objective_trace.push_back(f);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd grad = gradient(theta);

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() < 1e-7) {
      fit.converged = true;
      break;
    }

    Eigen::VectorXd direction = -h_inv * grad;
    if (direction.dot(grad) >= 0.0) direction = -grad;  // reset to descent
    const double dmax = direction.lpNorm<Eigen::Infinity>();
    if (dmax > 4.0) direction *= 4.0 / dmax;  // bounded move per iteration

    // Backtracking line search with projection keeps the trace monotone.
    double step = 1.0;
    Eigen::VectorXd theta_new;
    double f_new = f;
    bool improved = false;
    GlsResult gls_new;
    for (int ls = 0; ls < 50; ++ls) {
      theta_new = project(theta + step * direction);
      f_new = objective(theta_new, gls_new);
      const double armijo = 1e-4 * std::min(0.0, grad.dot(theta_new - theta));
      if (std::isfinite(f_new) && f_new <= f + armijo) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      // No descent step within numerical precision: local optimum.
      fit.converged = true;
      break;
    }

    const Eigen::VectorXd grad_new = gradient(theta_new);
    const Eigen::VectorXd s = theta_new - theta;
    const Eigen::VectorXd yk = grad_new - grad;
    const double sy = s.dot(yk);
    if (sy > 1e-12) {
      const Eigen::VectorXd hy = h_inv * yk;
      const double yhy = yk.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    const double delta = f - f_new;
    theta = theta_new;
    f = f_new;
    grad = grad_new;
    gls = gls_new;
    fit.objective_trace.push_back(f);
    if (delta <= options.tolerance * (1.0 + std::abs(f))) {
      fit.converged = true;
      ++iter;
      break;
    }
  }

  fit.n_iterations = iter;
  if (!fit.converged) {
    std::ostringstream msg;
    msg << "REML did not converge after " << options.max_iterations
        << " iterations; objective trace:";
    for (const double v : fit.objective_trace) msg << ' ' << v;
    throw NumericError(msg.str());
  }

  double vg, vh, ve;
  unpack(theta, vg, vh, ve);
  model.evaluate(vg, vh, ve, gls);

  // Components at the floor are reported as zero.
  auto floored = [&](bool used, int slot) {
    if (!used) return 0.0;
    return theta[slot] <= lo + 1e-6 ? 0.0 : std::exp(theta[slot]);
  };
  int k = 0;
  fit.var_g = floored(use_g, k);
  if (use_g) ++k;
  fit.var_h = floored(use_h, k);
  if (use_h) ++k;
  fit.var_resid = theta[k] <= lo + 1e-6 ? 0.0 : ve;

  fit.beta = gls.beta;
  fit.cov_beta = gls.cov_beta;
  fit.reml_log_likelihood = -0.5 * f;
  fit.blup_g = gls.blup_g;
  fit.blup_h = gls.blup_h;
  return fit;
}

}  // namespace rotcal
