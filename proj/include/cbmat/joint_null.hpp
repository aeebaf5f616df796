#pragma once

// Bivariate copula likelihood under the null (no genetic effect), joint
// MLE over the nuisance vector xi = (theta, gamma1, gamma2, phi1, phi2),
// and AIC-based margin/copula selection.

#include <Eigen/Core>
#include <string>
#include <vector>

#include "cbmat/copula.hpp"
#include "cbmat/margins.hpp"

namespace cbmat {

/// Joint log-density of one subject, both traits continuous.
double joint_logdensity_cc(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                           double y1, double y2, double lp1, double lp2);

/// Joint log-density of one subject, trait 1 binary (probit latent).
double joint_logdensity_mixed(const CopulaSpec& cop, const MarginSpec& m1,
                              const MarginSpec& m2, double y1, double y2, double lp1,
                              double lp2);

/// Gradient of the subject log-density in the two linear predictors.
struct LpScore {
  double d1 = 0.0;
  double d2 = 0.0;
};
LpScore joint_score_lp(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                       bool mixed, double y1, double y2, double lp1, double lp2);

struct NullFit {
  CopulaSpec copula;
  MarginSpec margin1, margin2;
  bool mixed = false;
  double loglik = 0.0;
  double aic = 0.0;
  int free_params = 0;  // includes df-on-grid parameters
  bool converged = false;
  bool theta_at_boundary = false;
  Eigen::VectorXd xi;       // packed free nuisance parameters
  Eigen::MatrixXd xi_info;  // observed information for xi at the optimum
  Eigen::MatrixXd xi_cov;   // its inverse
  bool xi_cov_repaired = false;
};

/// Number of packed nuisance parameters (theta + coefficients + free phis).
Eigen::Index xi_dimension(const NullFit& fit);
Eigen::VectorXd pack_xi(const NullFit& fit);
/// Copy of `fit` with parameters replaced by the packed vector.
NullFit with_xi(const NullFit& fit, const Eigen::VectorXd& xi);

double joint_loglik(const CopulaSpec& cop, const MarginSpec& m1, const MarginSpec& m2,
                    bool mixed, const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                    const Eigen::MatrixXd& X);

/// Gradient of the total joint log-likelihood in packed xi.
Eigen::VectorXd joint_loglik_xi_gradient(const NullFit& fit, const Eigen::VectorXd& y1,
                                         const Eigen::VectorXd& y2, const Eigen::MatrixXd& X);

struct FitOptions {
  int max_iter = 500;
  double f_rel_tol = 1e-9;
  double grad_tol = 1e-6;
  bool compute_xi_information = true;
};

/// Joint null MLE with genotypes excluded. Margins are fitted separately
/// first (Student-t df chosen per trait by AIC), then all free parameters
/// are polished jointly; theta is optimized on an unconstrained scale.
NullFit fit_null(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                 const Eigen::MatrixXd& X, CopulaFamily copula, MarginFamily margin1,
                 MarginFamily margin2, bool mixed, const FitOptions& opts = {});

struct CandidateRecord {
  std::string label;
  double aic = 0.0;
  double loglik = 0.0;
  bool ok = false;
  bool converged = false;
  std::string error;
};

struct SelectionReport {
  std::vector<CandidateRecord> margin1, margin2, copula;
  std::string margin1_choice, margin2_choice, copula_choice;
};

/// Margins first by per-trait marginal AIC, then the copula by joint AIC
/// given the selected margins.
NullFit select_model(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                     const Eigen::MatrixXd& X, std::vector<MarginFamily> margin1_candidates,
                     std::vector<MarginFamily> margin2_candidates,
                     std::vector<CopulaFamily> copula_candidates, bool mixed,
                     SelectionReport* report = nullptr, const FitOptions& opts = {});

}  // namespace cbmat
