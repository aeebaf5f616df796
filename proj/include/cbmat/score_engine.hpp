#pragma once

// Variance-component score machinery: per-subject score vector L and
// Hessian diagonals D, plug-in-corrected score covariance, per-rho Q
// statistics with their null eigenvalues, the trace-based correlation of
// the Q's, and the analytic and resampling min-p combinations.

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "cbmat/joint_null.hpp"
#include "cbmat/qform.hpp"

namespace cbmat {

enum class WeightScheme { Uniform, BetaMaf };

struct KernelConfig {
  Eigen::VectorXd weights;       // length r, positive; diagonal of Sigma_G
  std::vector<double> rho_grid;  // strictly increasing, within [0,1]
  WeightScheme scheme = WeightScheme::Uniform;

  static const std::vector<double>& default_rho_grid();
  static KernelConfig uniform(Eigen::Index r, std::vector<double> grid = default_rho_grid());
  /// Beta(1,25) density evaluated at each variant's MAF.
  static KernelConfig beta_maf(const Eigen::VectorXd& maf,
                               std::vector<double> grid = default_rho_grid());
  void check(Eigen::Index r) const;
};

/// Stacked per-subject score (L1', L2')' of length 2n, evaluated at the
/// fitted null with the region effect at zero.
Eigen::VectorXd compute_L(const NullFit& fit, const Eigen::VectorXd& y1,
                          const Eigen::VectorXd& y2, const Eigen::MatrixXd& X);

/// Diagonals of the 2n x 2n block Hessian in the linear predictors.
struct ScoreDiagonals {
  Eigen::VectorXd a11, a12, a21, a22;  // a12 and a21 agree up to FD noise
};
ScoreDiagonals compute_D(const NullFit& fit, const Eigen::VectorXd& y1,
                         const Eigen::VectorXd& y2, const Eigen::MatrixXd& X);

/// (I2 (x) G') L, the 2r-dimensional region score.
Eigen::VectorXd beta_score(const NullFit& fit, const Eigen::VectorXd& y1,
                           const Eigen::VectorXd& y2, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd& G);

/// B = -(I2 (x) G') D (I2 (x) G), symmetric by construction.
Eigen::MatrixXd score_information(const ScoreDiagonals& d, const Eigen::MatrixXd& G);

struct CorrectedB {
  Eigen::MatrixXd B;        // uncorrected score information
  Eigen::MatrixXd B_tilde;  // plug-in corrected covariance of the score
  bool ridged = false;      // a singular block needed a ridge retry
};

/// Plug-in correction: B_tilde = [I^{bb}]^{-1} from the partitioned
/// observed information at (beta = 0, xi-hat). Guarantees B_tilde <= B in
/// Loewner order up to numerical noise.
CorrectedB corrected_B(const NullFit& fit, const ScoreDiagonals& d,
                       const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                       const Eigen::MatrixXd& X, const Eigen::MatrixXd& G);

struct RhoStat {
  double rho = 0.0;
  double Q = 0.0;
  Eigen::VectorXd eigenvalues;  // of K_rho, clipped nonnegative
  Eigen::MatrixXd kernel;       // K_rho = B_tilde^{1/2} (Sigma_rho (x) Sigma_G) B_tilde^{1/2}
};

std::vector<RhoStat> q_statistics(const Eigen::VectorXd& L, const Eigen::MatrixXd& G,
                                  const Eigen::MatrixXd& B_tilde, const KernelConfig& kernel);

/// Pearson correlation of the Q statistics from kernel traces.
Eigen::MatrixXd gamma_correlation(const std::vector<RhoStat>& stats);

struct MinpResult {
  double p = 1.0;
  bool gamma_repaired = false;
};

/// Analytic min-p combination through a Gaussian copula on Gamma.
MinpResult minp_pvalue(const std::vector<double>& pvalues, const Eigen::MatrixXd& gamma,
                       std::uint64_t seed = 0x5bd1e995u);

/// Resampling check: Q draws from Z ~ N(0, I_2r) through the
/// fitted kernels, Kendall-tau correlation, Gaussian-copula combination.
double resampling_minp(const std::vector<RhoStat>& stats, int replicates, std::uint64_t seed);

struct ModelOptions {
  bool mixed = false;
  std::vector<MarginFamily> margin1_candidates;  // singleton = fixed family
  std::vector<MarginFamily> margin2_candidates;
  std::vector<CopulaFamily> copula_candidates;
  FitOptions fit;
  int resampling_replicates = 0;  // 0 disables the resampling check
  std::uint64_t seed = 1;
};

struct TestResult {
  NullFit fit;
  SelectionReport selection;
  std::vector<RhoStat> per_rho;
  std::vector<double> p_values;  // per rho
  Eigen::MatrixXd gamma;
  bool gamma_repaired = false;
  bool davies_ok = true;  // false if any rho needed the moment fallback
  double p_min = 1.0;
  double p_combined = 1.0;
  double rho_optimal = 0.0;
  bool rho_tie = false;
  double resampling_p = -1.0;  // < 0 when not requested
};

/// Full pipeline: model selection / null fit, score parts, corrected
/// covariance, per-rho Q and p-values, Gamma, min-p combination.
TestResult run_cbmat(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                     const Eigen::MatrixXd& X, const Eigen::MatrixXd& G,
                     const KernelConfig& kernel, const ModelOptions& options);

}  // namespace cbmat
