#pragma once

// Scalar special functions used across the library: normal distribution,
// regularized incomplete gamma/beta with inverses, Student-t, bivariate
// normal CDF, chi-square tails and rank correlation.

#include <vector>

namespace cbmat {

double norm_pdf(double x);
double norm_cdf(double x);
/// Inverse standard normal CDF (Wichura's PPND16, |error| < 1e-15).
double norm_quantile(double p);

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);
/// Inverse of gamma_p in x for fixed a.
double gamma_p_inv(double a, double p);

/// Regularized incomplete beta I_x(a, b).
double inc_beta(double a, double b, double x);
/// Inverse of inc_beta in x.
double inc_beta_inv(double a, double b, double p);

double student_t_pdf(double x, double nu);
double student_t_cdf(double x, double nu);
double student_t_quantile(double p, double nu);

double chi2_survival(double x, double df);

/// P(X <= x, Y <= y) for standard bivariate normal with correlation rho.
double bvn_cdf(double x, double y, double rho);

/// Survival of a noncentral chi-square with df degrees of freedom and
/// noncentrality delta, by Poisson mixture of central chi-squares.
double ncx2_survival(double x, double df, double delta);

/// Sample Kendall tau, O(n log n) (Knight's algorithm). Ties handled via
/// the tau-b denominator.
double kendall_tau(const std::vector<double>& x, const std::vector<double>& y);

/// Exact (Clopper-Pearson) two-sided binomial confidence interval.
struct BinomialCi {
  double lower = 0.0;
  double upper = 1.0;
};
BinomialCi clopper_pearson(long successes, long trials, double level = 0.95);

/// Asymptotic Kolmogorov-Smirnov p-value for statistic d at sample size n.
double ks_pvalue(double d, long n);

}  // namespace cbmat
