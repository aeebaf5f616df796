#include "cbmat/joint_null.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cbmat/optimize.hpp"
#include "cbmat/special.hpp"

namespace cbmat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFdStep = 6.0554544523933429e-06;  // cbrt(machine eps)

double safe_log(double x) { return x > 0.0 ? std::log(x) : -kInf; }

// Unconstrained <-> native copula parameter.
double theta_from_z(CopulaFamily family, double z) {
  switch (family) {
    case CopulaFamily::Gaussian: return std::tanh(z);
    case CopulaFamily::Clayton: return std::exp(z);
    case CopulaFamily::Frank: return z;
  }
  return z;
}

double z_from_theta(CopulaFamily family, double theta) {
  switch (family) {
    case CopulaFamily::Gaussian: return std::atanh(theta);
    case CopulaFamily::Clayton: return std::log(theta);
    case CopulaFamily::Frank: return theta;
  }
  return theta;
}

bool theta_near_boundary(CopulaFamily family, double theta) {
  switch (family) {
    case CopulaFamily::Gaussian: return std::abs(theta) > 1.0 - 1e-5;
    case CopulaFamily::Clayton: return theta < 1e-5 || theta > 1e4;
    case CopulaFamily::Frank: return std::abs(theta) > 90.0;
  }
  return false;
}

}  // namespace

double joint_logdensity_cc(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                           double y1, double y2, double lp1, double lp2) {
  const double l1 = margin_logpdf(m1, y1, lp1);
  const double l2 = margin_logpdf(m2, y2, lp2);
  if (!std::isfinite(l1) || !std::isfinite(l2)) return -kInf;
  const double u = clamp_unit(margin_cdf(m1, y1, lp1));
  const double v = clamp_unit(margin_cdf(m2, y2, lp2));
  const double lc = copula_logdensity(cop, u, v);
  const double total = l1 + l2 + lc;
  return std::isfinite(total) ? total : -kInf;
}

double joint_logdensity_mixed(const CopulaSpec& cop, const MarginSpec& m1,
                              const MarginSpec& m2, double y1, double y2, double lp1,
                              double lp2) {
  if (m1.family != MarginFamily::BinaryProbitLatent)
    throw std::invalid_argument("joint_logdensity_mixed: trait 1 must be probit");
  if (y1 != 0.0 && y1 != 1.0)
    throw std::domain_error("joint_logdensity_mixed: y1 must be 0 or 1");
  const double l2 = margin_logpdf(m2, y2, lp2);
  if (!std::isfinite(l2)) return -kInf;
  const double u = clamp_unit(norm_cdf(-lp1));  // 1 - mu1
  const double v = clamp_unit(margin_cdf(m2, y2, lp2));
  const double c01 = copula_dv(cop, u, v);
  const double term = (y1 == 0.0) ? safe_log(c01) : std::log1p(-std::min(c01, 1.0));
  const double total = l2 + term;
  return std::isfinite(total) ? total : -kInf;
}

LpScore joint_score_lp(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                       bool mixed, double y1, double y2, double lp1, double lp2) {
  LpScore s;
  if (!mixed) {
    const double u = clamp_unit(margin_cdf(m1, y1, lp1));
    const double v = clamp_unit(margin_cdf(m2, y2, lp2));
    s.d1 = margin_dlogpdf_dlp(m1, y1, lp1) +
           copula_dlogdensity_du(cop, u, v) * margin_dcdf_dlp(m1, y1, lp1);
    s.d2 = margin_dlogpdf_dlp(m2, y2, lp2) +
           copula_dlogdensity_dv(cop, u, v) * margin_dcdf_dlp(m2, y2, lp2);
    return s;
  }
  const double u = clamp_unit(norm_cdf(-lp1));
  const double v = clamp_unit(margin_cdf(m2, y2, lp2));
  const double c01 = copula_dv(cop, u, v);
  const double dens = copula_density(cop, u, v);  // d C01 / du
  const double d_c01_dv = copula_dv_dv(cop, u, v);
  const double du_dlp1 = -norm_pdf(lp1);
  const double dv_dlp2 = margin_dcdf_dlp(m2, y2, lp2);
  if (y1 == 0.0) {
    const double denom = std::max(c01, 1e-300);
    s.d1 = dens * du_dlp1 / denom;
    s.d2 = margin_dlogpdf_dlp(m2, y2, lp2) + d_c01_dv * dv_dlp2 / denom;
  } else {
    const double denom = std::max(1.0 - c01, 1e-300);
    s.d1 = -dens * du_dlp1 / denom;
    s.d2 = margin_dlogpdf_dlp(m2, y2, lp2) - d_c01_dv * dv_dlp2 / denom;
  }
  return s;
}

double joint_loglik(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                    bool mixed, const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                    const Eigen::MatrixXd& X) {
  const Eigen::VectorXd lp1 = X * m1.gamma;
  const Eigen::VectorXd lp2 = X * m2.gamma;
  double total = 0.0;
  for (Eigen::Index i = 0; i < y1.size(); ++i) {
    const double l = mixed
                         ? joint_logdensity_mixed(cop, m1, m2, y1[i], y2[i], lp1[i], lp2[i])
                         : joint_logdensity_cc(cop, m1, m2, y1[i], y2[i], lp1[i], lp2[i]);
    if (!std::isfinite(l)) return -kInf;
    total += l;
  }
  return total;
}

Eigen::Index xi_dimension(const NullFit& fit) {
  return 1 + fit.margin1.gamma.size() + fit.margin2.gamma.size() +
         (phi_is_free(fit.margin1.family) ? 1 : 0) + (phi_is_free(fit.margin2.family) ? 1 : 0);
}

Eigen::VectorXd pack_xi(const NullFit& fit) {
  Eigen::VectorXd xi(xi_dimension(fit));
  Eigen::Index k = 0;
  xi[k++] = fit.copula.theta;
  xi.segment(k, fit.margin1.gamma.size()) = fit.margin1.gamma;
  k += fit.margin1.gamma.size();
  xi.segment(k, fit.margin2.gamma.size()) = fit.margin2.gamma;
  k += fit.margin2.gamma.size();
  if (phi_is_free(fit.margin1.family)) xi[k++] = fit.margin1.phi;
  if (phi_is_free(fit.margin2.family)) xi[k++] = fit.margin2.phi;
  return xi;
}

NullFit with_xi(const NullFit& fit, const Eigen::VectorXd& xi) {
  if (xi.size() != xi_dimension(fit)) throw std::invalid_argument("with_xi: size mismatch");
  NullFit out = fit;
  Eigen::Index k = 0;
  out.copula.theta = xi[k++];
  out.margin1.gamma = xi.segment(k, fit.margin1.gamma.size());
  k += fit.margin1.gamma.size();
  out.margin2.gamma = xi.segment(k, fit.margin2.gamma.size());
  k += fit.margin2.gamma.size();
  if (phi_is_free(fit.margin1.family)) out.margin1.phi = xi[k++];
  if (phi_is_free(fit.margin2.family)) out.margin2.phi = xi[k++];
  return out;
}

Eigen::VectorXd joint_loglik_xi_gradient(const NullFit& fit, const Eigen::VectorXd& y1,
                                         const Eigen::VectorXd& y2,
                                         const Eigen::MatrixXd& X) {
  const Eigen::VectorXd xi = pack_xi(fit);
  const Eigen::Index q = xi.size();
  const Eigen::Index p1 = fit.margin1.gamma.size();
  const Eigen::Index p2 = fit.margin2.gamma.size();
  Eigen::VectorXd grad(q);

  // Coefficient blocks from the analytic per-subject score.
  {
    const Eigen::VectorXd lp1 = X * fit.margin1.gamma;
    const Eigen::VectorXd lp2 = X * fit.margin2.gamma;
    Eigen::VectorXd s1(y1.size()), s2(y1.size());
    for (Eigen::Index i = 0; i < y1.size(); ++i) {
      const LpScore s = joint_score_lp(fit.copula, fit.margin1, fit.margin2, fit.mixed,
                                       y1[i], y2[i], lp1[i], lp2[i]);
      s1[i] = s.d1;
      s2[i] = s.d2;
    }
    grad.segment(1, p1) = X.transpose() * s1;
    grad.segment(1 + p1, p2) = X.transpose() * s2;
  }

  // theta and dispersion coordinates by central differences.
  const auto ll_at = [&](const Eigen::VectorXd& x) {
    const NullFit f = with_xi(fit, x);
    return joint_loglik(f.copula, f.margin1, f.margin2, f.mixed, y1, y2, X);
  };
  Eigen::VectorXd xp = xi;
  for (Eigen::Index j = 0; j < q; ++j) {
    if (j >= 1 && j < 1 + p1 + p2) continue;
    double h = kFdStep * (1.0 + std::abs(xi[j]));
    // keep the perturbed parameter inside its domain
    const bool positive =
        (j == 0 && fit.copula.family == CopulaFamily::Clayton) || j >= 1 + p1 + p2;
    if (positive) h = std::min(h, 0.49 * std::abs(xi[j]) + 1e-12);
    if (j == 0 && fit.copula.family == CopulaFamily::Gaussian)
      h = std::min(h, 0.49 * (1.0 - std::abs(xi[j])) + 1e-12);
    xp[j] = xi[j] + h;
    const double fp = ll_at(xp);
    xp[j] = xi[j] - h;
    const double fm = ll_at(xp);
    xp[j] = xi[j];
    grad[j] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace {

struct PackedJoint {
  CopulaFamily copula;
  MarginFamily f1, f2;
  int df1 = 0, df2 = 0;
  bool mixed = false;
  Eigen::Index p = 0;  // columns of X
  bool phi1_free = false, phi2_free = false;

  Eigen::Index dim() const {
    return 1 + 2 * p + (phi1_free ? 1 : 0) + (phi2_free ? 1 : 0);
  }

  // z holds (z_theta, gamma1, gamma2, log phi1?, log phi2?).
  void unpack(const Eigen::VectorXd& z, CopulaSpec& cop, MarginSpec& m1,
              MarginSpec& m2) const {
    cop.family = copula;
    cop.theta = theta_from_z(copula, z[0]);
    m1.family = f1;
    m1.df = df1;
    m1.gamma = z.segment(1, p);
    m2.family = f2;
    m2.df = df2;
    m2.gamma = z.segment(1 + p, p);
    Eigen::Index k = 1 + 2 * p;
    m1.phi = phi1_free ? std::exp(z[k++]) : 1.0;
    m2.phi = phi2_free ? std::exp(z[k]) : 1.0;
  }
};

}  // namespace

NullFit fit_null(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                 const Eigen::MatrixXd& X, CopulaFamily copula, MarginFamily margin1,
                 MarginFamily margin2, bool mixed, const FitOptions& opts) {
  const Eigen::Index n = y1.size();
  if (y2.size() != n || X.rows() != n)
    throw std::invalid_argument("fit_null: inconsistent input lengths");
  if (mixed != (margin1 == MarginFamily::BinaryProbitLatent))
    throw std::invalid_argument("fit_null: mixed flag requires a probit first margin");
  if (mixed && ((y1.array() != 0.0) && (y1.array() != 1.0)).any())
    throw std::domain_error("fit_null: binary trait must be coded {0,1}");

  // Stage 1: separate margins (also fixes any Student-t df by AIC).
  const MarginFit mf1 = fit_margin_null(margin1, y1, X);
  const MarginFit mf2 = fit_margin_null(margin2, y2, X);

  PackedJoint pj;
  pj.copula = copula;
  pj.f1 = margin1;
  pj.f2 = margin2;
  pj.df1 = mf1.spec.df;
  pj.df2 = mf2.spec.df;
  pj.mixed = mixed;
  pj.p = X.cols();
  pj.phi1_free = phi_is_free(margin1);
  pj.phi2_free = phi_is_free(margin2);

  // Stage 2 start: separate fits plus a rank-based theta.
  Eigen::VectorXd z0(pj.dim());
  {
    std::vector<double> v1(y1.data(), y1.data() + n), v2(y2.data(), y2.data() + n);
    double tau = kendall_tau(v1, v2);
    double theta0;
    switch (copula) {
      case CopulaFamily::Gaussian:
        theta0 = std::sin(M_PI * std::min(std::max(tau, -0.95), 0.95) / 2.0);
        break;
      case CopulaFamily::Clayton: {
        const double t = std::min(std::max(tau, 0.02), 0.9);
        theta0 = 2.0 * t / (1.0 - t);
        break;
      }
      case CopulaFamily::Frank: {
        const double t = std::min(std::max(tau, -0.9), 0.9);
        theta0 = (std::abs(t) < 0.01) ? 0.1 : tau_to_theta(CopulaFamily::Frank, t);
        break;
      }
      default: theta0 = 0.0;
    }
    z0[0] = z_from_theta(copula, theta0);
    z0.segment(1, pj.p) = mf1.spec.gamma;
    z0.segment(1 + pj.p, pj.p) = mf2.spec.gamma;
    Eigen::Index k = 1 + 2 * pj.p;
    if (pj.phi1_free) z0[k++] = std::log(mf1.spec.phi);
    if (pj.phi2_free) z0[k] = std::log(mf2.spec.phi);
  }

  const double dn = static_cast<double>(n);
  const auto nll = [&](const Eigen::VectorXd& z) -> double {
    CopulaSpec cop;
    MarginSpec m1, m2;
    pj.unpack(z, cop, m1, m2);
    const double ll = joint_loglik(cop, m1, m2, mixed, y1, y2, X);
    return std::isfinite(ll) ? -ll / dn : kInf;
  };
  const auto grad = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    CopulaSpec cop;
    MarginSpec m1, m2;
    pj.unpack(z, cop, m1, m2);
    Eigen::VectorXd g(z.size());
    const Eigen::VectorXd lp1 = X * m1.gamma;
    const Eigen::VectorXd lp2 = X * m2.gamma;
    Eigen::VectorXd s1(n), s2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const LpScore s = joint_score_lp(cop, m1, m2, mixed, y1[i], y2[i], lp1[i], lp2[i]);
      s1[i] = s.d1;
      s2[i] = s.d2;
    }
    g.segment(1, pj.p) = -(X.transpose() * s1) / dn;
    g.segment(1 + pj.p, pj.p) = -(X.transpose() * s2) / dn;
    Eigen::VectorXd zp = z;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      if (j >= 1 && j < 1 + 2 * pj.p) continue;
      const double h = kFdStep * (1.0 + std::abs(z[j]));
      zp[j] = z[j] + h;
      const double fp = nll(zp);
      zp[j] = z[j] - h;
      const double fm = nll(zp);
      zp[j] = z[j];
      g[j] = (fp - fm) / (2.0 * h);
    }
    return g;
  };

  OptimOptions oopt;
  oopt.max_iter = opts.max_iter;
  oopt.f_rel_tol = opts.f_rel_tol;
  oopt.grad_tol = opts.grad_tol;
  const OptimResult opt = minimize_bfgs(nll, grad, z0, oopt);

  NullFit fit;
  pj.unpack(opt.x, fit.copula, fit.margin1, fit.margin2);
  fit.mixed = mixed;
  fit.loglik = -opt.f * dn;
  fit.converged = opt.converged && std::isfinite(fit.loglik);
  fit.theta_at_boundary = theta_near_boundary(copula, fit.copula.theta);
  fit.free_params = static_cast<int>(pj.dim()) +
                    (margin1 == MarginFamily::StudentTIdentity ? 1 : 0) +
                    (margin2 == MarginFamily::StudentTIdentity ? 1 : 0);
  fit.aic = 2.0 * fit.free_params - 2.0 * fit.loglik;
  fit.xi = pack_xi(fit);

  if (opts.compute_xi_information) {
    const Eigen::Index q = fit.xi.size();
    Eigen::MatrixXd info(q, q);
    Eigen::VectorXd xp = fit.xi;
    for (Eigen::Index j = 0; j < q; ++j) {
      double h = kFdStep * (1.0 + std::abs(fit.xi[j]));
      const bool positive = (j == 0 && copula == CopulaFamily::Clayton) ||
                            (j >= 1 + 2 * pj.p);
      if (positive) h = std::min(h, 0.49 * std::abs(fit.xi[j]) + 1e-12);
      if (j == 0 && copula == CopulaFamily::Gaussian)
        h = std::min(h, 0.49 * (1.0 - std::abs(fit.xi[j])) + 1e-12);
      xp[j] = fit.xi[j] + h;
      const Eigen::VectorXd gp = joint_loglik_xi_gradient(with_xi(fit, xp), y1, y2, X);
      xp[j] = fit.xi[j] - h;
      const Eigen::VectorXd gm = joint_loglik_xi_gradient(with_xi(fit, xp), y1, y2, X);
      xp[j] = fit.xi[j];
      info.col(j) = -(gp - gm) / (2.0 * h);
    }
    info = 0.5 * (info + info.transpose()).eval();
    fit.xi_info = info;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.eigenvalues().minCoeff() <= 1e-12 * lmax) {
      // clip to a positive-definite repair and flag it
      Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10 * lmax);
      fit.xi_info = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
      fit.xi_cov = es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                   es.eigenvectors().transpose();
      fit.xi_cov_repaired = true;
    } else {
      fit.xi_cov = info.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
      fit.xi_cov = 0.5 * (fit.xi_cov + fit.xi_cov.transpose()).eval();
    }
  }
  return fit;
}

namespace {

CandidateRecord record_from(const std::string& label, const MarginFit& fit) {
  CandidateRecord rec;
  rec.label = label;
  rec.aic = fit.aic;
  rec.loglik = fit.loglik;
  rec.ok = true;
  rec.converged = fit.converged;
  return rec;
}

}  // namespace

NullFit select_model(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                     const Eigen::MatrixXd& X, std::vector<MarginFamily> margin1_candidates,
                     std::vector<MarginFamily> margin2_candidates,
                     std::vector<CopulaFamily> copula_candidates, bool mixed,
                     SelectionReport* report, const FitOptions& opts) {
  if (margin1_candidates.empty() || margin2_candidates.empty() || copula_candidates.empty())
    throw std::invalid_argument("select_model: empty candidate set");
  SelectionReport local;
  SelectionReport& rep = report ? *report : local;

  const auto pick_margin = [&](const Eigen::VectorXd& y,
                               const std::vector<MarginFamily>& cands,
                               std::vector<CandidateRecord>& records) -> MarginFamily {
    bool have = false;
    double best_aic = kInf;
    MarginFamily best = cands.front();
    for (MarginFamily fam : cands) {
      CandidateRecord rec;
      rec.label = to_string(fam);
      try {
        const MarginFit fit = fit_margin_null(fam, y, X);
        rec = record_from(rec.label, fit);
        if (fit.aic < best_aic) {
          best_aic = fit.aic;
          best = fam;
          have = true;
        }
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
      records.push_back(rec);
    }
    if (!have) throw std::runtime_error("select_model: all margin candidates failed");
    return best;
  };

  const MarginFamily m1 =
      mixed ? MarginFamily::BinaryProbitLatent
            : pick_margin(y1, margin1_candidates, rep.margin1);
  if (mixed) {
    CandidateRecord rec;
    rec.label = to_string(m1);
    rec.ok = true;
    rec.converged = true;
    rep.margin1.push_back(rec);
  }
  const MarginFamily m2 = pick_margin(y2, margin2_candidates, rep.margin2);
  rep.margin1_choice = to_string(m1);
  rep.margin2_choice = to_string(m2);

  bool have = false;
  NullFit best;
  for (CopulaFamily cop : copula_candidates) {
    CandidateRecord rec;
    rec.label = to_string(cop);
    try {
      NullFit fit = fit_null(y1, y2, X, cop, m1, m2, mixed, opts);
      rec.aic = fit.aic;
      rec.loglik = fit.loglik;
      rec.ok = true;
      rec.converged = fit.converged;
      if (!have || fit.aic < best.aic) {
        best = std::move(fit);
        have = true;
      }
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    rep.copula.push_back(rec);
  }
  if (!have) throw std::runtime_error("select_model: all copula candidates failed");
  rep.copula_choice = to_string(best.copula.family);
  return best;
}

}  // namespace cbmat
