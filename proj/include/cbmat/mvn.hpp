#pragma once

// Multivariate normal rectangle probabilities by randomized quasi-Monte
// Carlo (Genz sequential conditioning with a Richtmyer lattice).

#include <Eigen/Core>
#include <cstdint>

namespace cbmat {

struct MvnResult {
  double prob = 0.0;
  double abs_error = 0.0;  // 3.5 * standard error over random shifts
  bool repaired = false;   // correlation matrix needed a PSD repair
};

/// P(X_1 <= b_1, ..., X_d <= b_d) for X ~ N(0, corr). The correlation
/// matrix is repaired to the nearest PSD candidate (eigenvalue clipping,
/// unit-diagonal rescale) when not PSD.
MvnResult mvn_cdf(const Eigen::VectorXd& b, const Eigen::MatrixXd& corr,
                  double abs_tol = 1e-4, std::uint64_t seed = 0x5bd1e995u);

/// Equicoordinate case P(X_i <= z for all i).
MvnResult mvn_cdf_equicoordinate(double z, const Eigen::MatrixXd& corr,
                                 double abs_tol = 1e-4, std::uint64_t seed = 0x5bd1e995u);

/// Clip-and-rescale nearest PSD repair used by mvn_cdf; exposed for the
/// min-p combiner's Gamma handling.
Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& corr, bool* repaired = nullptr);

}  // namespace cbmat
