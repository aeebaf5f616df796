#pragma once

// Bivariate copula primitives: Gaussian, Frank and Clayton families.
// All functions are pure; samplers take a caller-owned Rng.

#include <string>
#include <utility>
#include <vector>

#include "cbmat/rng.hpp"

namespace cbmat {

enum class CopulaFamily { Gaussian, Frank, Clayton };

std::string to_string(CopulaFamily family);
CopulaFamily copula_family_from_string(const std::string& name);

struct CopulaSpec {
  CopulaFamily family = CopulaFamily::Gaussian;
  double theta = 0.0;
};

/// Throws std::domain_error when theta is outside the family's range
/// (Gaussian (-1,1), Frank any real, Clayton (0,inf); Frank/Clayton
/// |theta| below 1e-12 is evaluated as the independence limit).
void validate(const CopulaSpec& spec);

/// Unit-interval clamp applied before density/derivative evaluation;
/// fitted marginal CDFs can return exact 0/1 in floating point.
inline double clamp_unit(double u) {
  constexpr double eps = 1e-10;
  return u < eps ? eps : (u > 1.0 - eps ? 1.0 - eps : u);
}

/// C_theta(u, v) on [0,1]^2.
double copula_cdf(const CopulaSpec& spec, double u, double v);

/// Copula density c_theta(u, v).
double copula_density(const CopulaSpec& spec, double u, double v);
double copula_logdensity(const CopulaSpec& spec, double u, double v);

/// C^{01}(u, v) = dC/dv, the conditional CDF of U given V = v.
double copula_dv(const CopulaSpec& spec, double u, double v);

/// Partial derivatives of log c and of C^{01} used by the score engine.
double copula_dlogdensity_du(const CopulaSpec& spec, double u, double v);
double copula_dlogdensity_dv(const CopulaSpec& spec, double u, double v);
/// d C^{01}(u,v) / dv  (the u-derivative of C^{01} is the copula density).
double copula_dv_dv(const CopulaSpec& spec, double u, double v);

/// Inverse of C^{01} in its first argument: u with C^{01}(u, v) = w.
double copula_dv_inverse(const CopulaSpec& spec, double w, double v);

double tau_to_theta(CopulaFamily family, double tau);
double theta_to_tau(CopulaFamily family, double theta);

/// n pairs with uniform margins and dependence C_theta. Gaussian sampling
/// uses correlated normals; Frank/Clayton use the conditional-distribution
/// method through copula_dv_inverse.
std::vector<std::pair<double, double>> sample_copula(const CopulaSpec& spec, std::size_t n,
                                                     Rng& rng);

}  // namespace cbmat
