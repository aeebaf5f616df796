#pragma once

// Generative protocol and batch experiments: genotype simulation, random
// region effects, copula phenotype generation, eta calibration from
// heritability, and replicated type-I-error / power runs.

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cbmat/rng.hpp"
#include "cbmat/score_engine.hpp"

namespace cbmat {

struct ScenarioSpec {
  Eigen::Index n = 503;
  Eigen::Index r = 30;
  Eigen::VectorXd maf;  // empty => drawn Uniform(0.005, 0.5)
  bool resample_mafs = false;  // redraw the region's MAFs per replicate
  double tau = 0.2;
  CopulaFamily copula = CopulaFamily::Gaussian;
  MarginFamily margin1 = MarginFamily::ExponentialLog;
  MarginFamily margin2 = MarginFamily::ExponentialLog;
  int df1 = 3, df2 = 3;  // used by Student-t margins
  Eigen::VectorXd gamma1, gamma2;
  double phi1 = 1.0, phi2 = 1.0;
  double causal_fraction = 0.0;  // v
  double pleiotropy = 0.0;       // rho between a variant's two effects
  double h2 = 0.0;
  int replicates = 2000;
  double alpha = 0.01;
  std::uint64_t seed = 1;

  /// Covariate effects and trait setup of the reference scenario grid.
  static ScenarioSpec reference_defaults();
  bool mixed() const { return margin1 == MarginFamily::BinaryProbitLatent; }
};

struct SimulatedDataset {
  Eigen::MatrixXd G;  // n x r dosages in {0,1,2}
  Eigen::MatrixXd X;  // n x 3: intercept, Bernoulli(0.5), N(0,1)
  Eigen::VectorXd y1, y2;
  Eigen::VectorXd beta_true;  // 2r
  double eta_true = 0.0;
  Eigen::VectorXd maf;
  std::vector<int> causal;  // variant indices with nonzero prior variance
};

/// eta = phi_star h^2 / (2 (1-h^2) sum_j w_j p_j (p_j + 1)), with w the
/// causal indicator weights.
double eta_from_h2(double h2, double phi_star, const Eigen::VectorXd& weights,
                   const Eigen::VectorXd& maf);

/// gamma' Var[X] gamma + phi for the standard design (intercept,
/// Bernoulli(0.5), standard normal).
double phi_star(const Eigen::VectorXd& gamma, double phi);

SimulatedDataset simulate_dataset(const ScenarioSpec& spec, Rng& rng);

struct ExperimentSummary {
  long replicates = 0;
  long valid = 0;
  long failures = 0;
  long rejections = 0;
  double rate = 0.0;
  BinomialCi ci;
  double alpha = 0.0;
  std::vector<double> p_values;  // one per replicate; NaN marks a failure
};

/// Callable producing the per-replicate p-value; the default runs the full
/// test engine. Tests may substitute e.g. a uniform sampler.
using ReplicateRunner = std::function<double(const SimulatedDataset&, Rng&)>;

ReplicateRunner cbmat_runner(const ModelOptions& options, const KernelConfig* kernel = nullptr);

/// Replicates run on independent seeded streams (seed, replicate index);
/// execution is parallel over a thread pool but byte-deterministic.
ExperimentSummary run_experiment(const ScenarioSpec& spec, const ReplicateRunner& runner,
                                 int threads = 0);

}  // namespace cbmat
