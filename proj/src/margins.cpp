#include "cbmat/margins.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cbmat/optimize.hpp"
#include "cbmat/special.hpp"

namespace cbmat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_norm_cdf(double x) {
  if (x > -37.0) return std::log(norm_cdf(x));
  return -0.5 * x * x - std::log(-x) - 0.9189385332046727;
}

[[noreturn]] void bad_support(MarginFamily family) {
  throw std::domain_error("margin " + to_string(family) + ": response outside support");
}

}  // namespace

std::string to_string(MarginFamily family) {
  switch (family) {
    case MarginFamily::GaussianIdentity: return "gaussian";
    case MarginFamily::ExponentialLog: return "exponential";
    case MarginFamily::GammaLog: return "gamma";
    case MarginFamily::StudentTIdentity: return "student-t";
    case MarginFamily::BinaryProbitLatent: return "probit";
  }
  return "?";
}

MarginFamily margin_family_from_string(const std::string& name) {
  if (name == "gaussian" || name == "normal") return MarginFamily::GaussianIdentity;
  if (name == "exponential") return MarginFamily::ExponentialLog;
  if (name == "gamma") return MarginFamily::GammaLog;
  if (name == "student-t" || name == "student" || name == "t") return MarginFamily::StudentTIdentity;
  if (name == "probit" || name == "binary") return MarginFamily::BinaryProbitLatent;
  throw std::invalid_argument("unknown margin family: " + name);
}

bool phi_is_free(MarginFamily family) {
  return family == MarginFamily::GaussianIdentity || family == MarginFamily::GammaLog ||
         family == MarginFamily::StudentTIdentity;
}

bool is_binary(MarginFamily family) { return family == MarginFamily::BinaryProbitLatent; }

void validate(const MarginSpec& spec) {
  if (spec.gamma.size() == 0) throw std::invalid_argument("margin: empty coefficient vector");
  if (!(spec.phi > 0.0)) throw std::invalid_argument("margin: phi must be positive");
  if (spec.family == MarginFamily::StudentTIdentity && spec.df < 3)
    throw std::invalid_argument("margin: student-t needs df >= 3");
}

void check_support(MarginFamily family, const Eigen::VectorXd& y) {
  switch (family) {
    case MarginFamily::ExponentialLog:
    case MarginFamily::GammaLog:
      if ((y.array() <= 0.0).any()) bad_support(family);
      return;
    case MarginFamily::BinaryProbitLatent:
      if (((y.array() != 0.0) && (y.array() != 1.0)).any()) bad_support(family);
      return;
    default:
      if (!y.allFinite()) bad_support(family);
      return;
  }
}

double linear_predictor(const MarginSpec& spec, const Eigen::RowVectorXd& x_row) {
  if (x_row.size() != spec.gamma.size())
    throw std::invalid_argument("margin: covariate row and gamma size mismatch");
  return x_row * spec.gamma;
}

double mean_from_lp(const MarginSpec& spec, double lp) {
  switch (spec.family) {
    case MarginFamily::GaussianIdentity:
    case MarginFamily::StudentTIdentity:
      return lp;
    case MarginFamily::ExponentialLog:
    case MarginFamily::GammaLog: {
      const double mu = std::exp(lp);
      if (!std::isfinite(mu) || mu <= 0.0)
        throw std::domain_error("margin: mean outside family domain");
      return mu;
    }
    case MarginFamily::BinaryProbitLatent:
      return norm_cdf(lp);
  }
  return lp;
}

double margin_mean(const MarginSpec& spec, const Eigen::RowVectorXd& x_row) {
  return mean_from_lp(spec, linear_predictor(spec, x_row));
}

double margin_logpdf(const MarginSpec& spec, double y, double lp) {
  switch (spec.family) {
    case MarginFamily::GaussianIdentity: {
      const double r = y - lp;
      return -0.5 * std::log(2.0 * M_PI * spec.phi) - r * r / (2.0 * spec.phi);
    }
    case MarginFamily::ExponentialLog: {
      const double v = -lp - y * std::exp(-lp);
      return std::isfinite(v) ? v : -kInf;
    }
    case MarginFamily::GammaLog: {
      if (y <= 0.0) return -kInf;
      const double alpha = 1.0 / spec.phi;
      const double lscale = lp + std::log(spec.phi);
      const double v = (alpha - 1.0) * std::log(y) - y * std::exp(-lscale) -
                       std::lgamma(alpha) - alpha * lscale;
      return std::isfinite(v) ? v : -kInf;
    }
    case MarginFamily::StudentTIdentity: {
      const double z = (y - lp) / spec.phi;
      return std::log(student_t_pdf(z, spec.df)) - std::log(spec.phi);
    }
    case MarginFamily::BinaryProbitLatent:
      return (y != 0.0) ? log_norm_cdf(lp) : log_norm_cdf(-lp);
  }
  return -kInf;
}

double margin_pdf(const MarginSpec& spec, double y, double lp) {
  return std::exp(margin_logpdf(spec, y, lp));
}

double margin_cdf(const MarginSpec& spec, double y, double lp) {
  switch (spec.family) {
    case MarginFamily::GaussianIdentity:
      return norm_cdf((y - lp) / std::sqrt(spec.phi));
    case MarginFamily::ExponentialLog: {
      if (y < 0.0) return 0.0;
      return -std::expm1(-y * std::exp(-lp));
    }
    case MarginFamily::GammaLog: {
      if (y <= 0.0) return 0.0;
      return gamma_p(1.0 / spec.phi, y * std::exp(-lp) / spec.phi);
    }
    case MarginFamily::StudentTIdentity:
      return student_t_cdf((y - lp) / spec.phi, spec.df);
    case MarginFamily::BinaryProbitLatent: {
      if (y < 0.0) return 0.0;
      if (y < 1.0) return norm_cdf(-lp);  // P(Y = 0) = 1 - mu
      return 1.0;
    }
  }
  return 0.0;
}

double margin_quantile(const MarginSpec& spec, double p, double lp) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("margin_quantile: p outside (0,1)");
  switch (spec.family) {
    case MarginFamily::GaussianIdentity:
      return lp + std::sqrt(spec.phi) * norm_quantile(p);
    case MarginFamily::ExponentialLog:
      return -std::exp(lp) * std::log1p(-p);
    case MarginFamily::GammaLog:
      return spec.phi * std::exp(lp) * gamma_p_inv(1.0 / spec.phi, p);
    case MarginFamily::StudentTIdentity:
      return lp + spec.phi * student_t_quantile(p, spec.df);
    case MarginFamily::BinaryProbitLatent:
      return (p <= norm_cdf(-lp)) ? 0.0 : 1.0;
  }
  return 0.0;
}

double margin_dlogpdf_dlp(const MarginSpec& spec, double y, double lp) {
  switch (spec.family) {
    case MarginFamily::GaussianIdentity:
      return (y - lp) / spec.phi;
    case MarginFamily::ExponentialLog:
      return y * std::exp(-lp) - 1.0;
    case MarginFamily::GammaLog:
      return (y * std::exp(-lp) - 1.0) / spec.phi;
    case MarginFamily::StudentTIdentity: {
      const double nu = spec.df;
      const double z = (y - lp) / spec.phi;
      return (nu + 1.0) * z / (spec.phi * (nu + z * z));
    }
    case MarginFamily::BinaryProbitLatent: {
      const double d = norm_pdf(lp);
      return (y != 0.0) ? d / std::max(norm_cdf(lp), 1e-300)
                        : -d / std::max(norm_cdf(-lp), 1e-300);
    }
  }
  return 0.0;
}

double margin_dcdf_dlp(const MarginSpec& spec, double y, double lp) {
  switch (spec.family) {
    case MarginFamily::GaussianIdentity:
    case MarginFamily::StudentTIdentity:
      return -margin_pdf(spec, y, lp);
    case MarginFamily::ExponentialLog:
    case MarginFamily::GammaLog:
      // log link: dF/dlp = dF/dmu * mu = -y f(y).
      return -y * margin_pdf(spec, y, lp);
    case MarginFamily::BinaryProbitLatent:
      return (y < 1.0 && y >= 0.0) ? -norm_pdf(lp) : 0.0;
  }
  return 0.0;
}

const std::vector<int>& student_df_grid() {
  static const std::vector<int> grid{3, 5, 8, 12, 20, 30};
  return grid;
}

double margin_loglik(const MarginSpec& spec, const Eigen::VectorXd& y,
                     const Eigen::MatrixXd& X) {
  const Eigen::VectorXd lp = X * spec.gamma;
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) total += margin_logpdf(spec, y[i], lp[i]);
  return total;
}

namespace {

struct PackedMargin {
  MarginFamily family;
  int df;
  Eigen::Index ncoef;
};

MarginSpec unpack(const PackedMargin& pm, const Eigen::VectorXd& params) {
  MarginSpec spec;
  spec.family = pm.family;
  spec.df = pm.df;
  spec.gamma = params.head(pm.ncoef);
  spec.phi = phi_is_free(pm.family) ? std::exp(params[pm.ncoef]) : 1.0;
  return spec;
}

MarginFit fit_packed(const PackedMargin& pm, const Eigen::VectorXd& start,
                     const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  const double n = static_cast<double>(y.size());
  const auto nll = [&](const Eigen::VectorXd& params) -> double {
    const MarginSpec spec = unpack(pm, params);
    const Eigen::VectorXd lp = X * spec.gamma;
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double l = margin_logpdf(spec, y[i], lp[i]);
      if (!std::isfinite(l)) return kInf;
      total += l;
    }
    return -total / n;
  };
  const auto grad = [&](const Eigen::VectorXd& params) -> Eigen::VectorXd {
    const MarginSpec spec = unpack(pm, params);
    const Eigen::VectorXd lp = X * spec.gamma;
    Eigen::VectorXd score(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i)
      score[i] = margin_dlogpdf_dlp(spec, y[i], lp[i]);
    Eigen::VectorXd g(params.size());
    g.head(pm.ncoef) = -(X.transpose() * score) / n;
    if (phi_is_free(pm.family)) {
      // central difference on the log-dispersion coordinate
      const double h = 6.0554544523933429e-06 * (1.0 + std::abs(params[pm.ncoef]));
      Eigen::VectorXd p2 = params;
      p2[pm.ncoef] = params[pm.ncoef] + h;
      const double fp = nll(p2);
      p2[pm.ncoef] = params[pm.ncoef] - h;
      const double fm = nll(p2);
      g[pm.ncoef] = (fp - fm) / (2.0 * h);
    }
    return g;
  };

  const OptimResult opt = minimize_bfgs(nll, grad, start);
  if (!opt.converged || !std::isfinite(opt.f))
    throw std::runtime_error(
        "fit_margin_null(" + to_string(pm.family) + "): no convergence after " +
        std::to_string(opt.iterations) + " iterations (scaled gradient " +
        std::to_string(opt.grad.lpNorm<Eigen::Infinity>()) + ", nll " + std::to_string(opt.f) +
        ")");
  MarginFit fit;
  fit.spec = unpack(pm, opt.x);
  fit.loglik = -opt.f * n;
  fit.free_params = static_cast<int>(opt.x.size()) +
                    (pm.family == MarginFamily::StudentTIdentity ? 1 : 0);
  fit.aic = 2.0 * fit.free_params - 2.0 * fit.loglik;
  fit.converged = opt.converged;
  fit.grad_norm = opt.grad.lpNorm<Eigen::Infinity>();
  fit.iterations = opt.iterations;
  return fit;
}

Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return X.colPivHouseholderQr().solve(y);
}

}  // namespace

MarginFit fit_margin_null(MarginFamily family, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& X) {
  const Eigen::Index n = y.size();
  const Eigen::Index p = X.cols();
  if (X.rows() != n) throw std::invalid_argument("fit_margin_null: X/y size mismatch");
  if (n <= p + 1) throw std::invalid_argument("fit_margin_null: too few subjects");
  if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(X).rank() < p)
    throw std::invalid_argument("fit_margin_null: design matrix is rank deficient");
  check_support(family, y);

  const double y_mean = y.mean();
  const double y_var = (y.array() - y_mean).square().sum() / static_cast<double>(n);
  if (family == MarginFamily::BinaryProbitLatent) {
    if (y_mean <= 0.0 || y_mean >= 1.0)
      throw std::domain_error("fit_margin_null: binary trait is constant");
  } else if (y_var <= 0.0) {
    throw std::domain_error("fit_margin_null: degenerate (constant) trait");
  }

  PackedMargin pm{family, 0, p};
  switch (family) {
    case MarginFamily::GaussianIdentity: {
      Eigen::VectorXd start(p + 1);
      start.head(p) = ols(X, y);
      const double rss = (y - X * start.head(p)).squaredNorm();
      start[p] = std::log(std::max(rss / static_cast<double>(n), 1e-12));
      return fit_packed(pm, start, y, X);
    }
    case MarginFamily::ExponentialLog: {
      Eigen::VectorXd start = ols(X, y.array().log().matrix());
      return fit_packed(pm, start, y, X);
    }
    case MarginFamily::GammaLog: {
      Eigen::VectorXd start(p + 1);
      start.head(p) = ols(X, y.array().log().matrix());
      const Eigen::ArrayXd mu0 = (X * start.head(p)).array().exp();
      const Eigen::ArrayXd ratio = y.array() / mu0;
      const double phi0 = std::max((ratio - ratio.mean()).square().mean(), 1e-3);
      start[p] = std::log(phi0);
      return fit_packed(pm, start, y, X);
    }
    case MarginFamily::StudentTIdentity: {
      Eigen::VectorXd gamma0 = ols(X, y);
      const double sd0 =
          std::sqrt((y - X * gamma0).squaredNorm() / static_cast<double>(n));
      MarginFit best;
      bool have = false;
      for (int df : student_df_grid()) {
        pm.df = df;
        Eigen::VectorXd start(p + 1);
        start.head(p) = gamma0;
        const double shrink = (df > 2) ? std::sqrt((df - 2.0) / df) : 1.0;
        start[p] = std::log(std::max(sd0 * shrink, 1e-8));
        MarginFit fit = fit_packed(pm, start, y, X);
        if (!have || fit.aic < best.aic) {
          best = fit;
          have = true;
        }
      }
      return best;
    }
    case MarginFamily::BinaryProbitLatent: {
      Eigen::VectorXd start = Eigen::VectorXd::Zero(p);
      start[0] = norm_quantile(std::min(std::max(y_mean, 1e-3), 1.0 - 1e-3));
      return fit_packed(pm, start, y, X);
    }
  }
  throw std::logic_error("fit_margin_null: unreachable");
}

}  // namespace cbmat
