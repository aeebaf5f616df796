#pragma once

// Marginal trait models: location/dispersion families with links, giving
// mean, CDF/pdf/quantile, log-likelihood and single-trait null MLEs.

#include <Eigen/Core>
#include <string>
#include <vector>

namespace cbmat {

enum class MarginFamily {
  GaussianIdentity,
  ExponentialLog,
  GammaLog,
  StudentTIdentity,
  BinaryProbitLatent,
};

std::string to_string(MarginFamily family);
MarginFamily margin_family_from_string(const std::string& name);

struct MarginSpec {
  MarginFamily family = MarginFamily::GaussianIdentity;
  Eigen::VectorXd gamma;  // covariate coefficients, intercept first
  double phi = 1.0;       // dispersion; fixed to 1 for Exponential and Probit
  int df = 0;             // StudentTIdentity degrees of freedom (>= 3)
};

/// Whether phi is an estimated parameter for this family.
bool phi_is_free(MarginFamily family);
bool is_binary(MarginFamily family);

void validate(const MarginSpec& spec);
/// Throws std::domain_error if any y is outside the family support.
void check_support(MarginFamily family, const Eigen::VectorXd& y);

double linear_predictor(const MarginSpec& spec, const Eigen::RowVectorXd& x_row);
double mean_from_lp(const MarginSpec& spec, double lp);
double margin_mean(const MarginSpec& spec, const Eigen::RowVectorXd& x_row);

// All evaluation functions take the subject's linear predictor.
double margin_cdf(const MarginSpec& spec, double y, double lp);
double margin_pdf(const MarginSpec& spec, double y, double lp);
double margin_logpdf(const MarginSpec& spec, double y, double lp);
double margin_quantile(const MarginSpec& spec, double p, double lp);

/// d log f(y)/d lp and d F(y)/d lp; the score-engine building blocks.
double margin_dlogpdf_dlp(const MarginSpec& spec, double y, double lp);
double margin_dcdf_dlp(const MarginSpec& spec, double y, double lp);

struct MarginFit {
  MarginSpec spec;
  double loglik = 0.0;
  double aic = 0.0;
  int free_params = 0;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Default df grid for StudentTIdentity AIC selection.
const std::vector<int>& student_df_grid();

/// Null MLE of one trait on covariates only. For StudentTIdentity the df
/// is chosen from student_df_grid() by AIC (df counts as a free parameter).
MarginFit fit_margin_null(MarginFamily family, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& X);

/// Marginal log-likelihood of the sample at the given spec.
double margin_loglik(const MarginSpec& spec, const Eigen::VectorXd& y,
                     const Eigen::MatrixXd& X);

}  // namespace cbmat
