#pragma once

// Dense quasi-Newton (BFGS) minimizer with a backtracking Armijo line
// search. Objectives may return +inf to reject a trial point.

#include <Eigen/Core>
#include <functional>

namespace cbmat {

struct OptimOptions {
  int max_iter = 500;
  double f_rel_tol = 1e-9;
  double grad_tol = 1e-6;
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

OptimResult minimize_bfgs(const Objective& f, const Gradient& grad, Eigen::VectorXd x0,
                          const OptimOptions& opts = {});

/// Central-difference gradient, step eps^(1/3) * (1 + |x_i|) per coordinate.
Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x);

}  // namespace cbmat
