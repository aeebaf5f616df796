#include "cbmat/optimize.hpp"

#include <cmath>
#include <limits>

namespace cbmat {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x) {
  const double cbrt_eps = 6.055454452393343e-06;
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = cbrt_eps * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

OptimResult minimize_bfgs(const Objective& f, const Gradient& grad, Eigen::VectorXd x0,
                          const OptimOptions& opts) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  res.x = std::move(x0);
  res.f = f(res.x);
  if (!std::isfinite(res.f)) {
    res.grad = Eigen::VectorXd::Zero(n);
    return res;  // not converged; caller inspects
  }
  Eigen::VectorXd g = grad(res.x);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter + 1;
    if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd p = -(H * g);
    double gtp = g.dot(p);
    if (!(gtp < 0.0)) {  // not a descent direction; reset
      H.setIdentity();
      p = -g;
      gtp = -g.squaredNorm();
      if (gtp == 0.0) {
        res.converged = true;
        break;
      }
    }
    // Backtracking Armijo search.
    double step = 1.0;
    double f_new = kInf;
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * p;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * step * gtp) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Eigen::VectorXd g_new = grad(x_new);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    const double f_old = res.f;
    res.x = std::move(x_new);
    res.f = f_new;
    g = std::move(g_new);

    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd Hy = H * yv;
      const double yHy = yv.dot(Hy);
      // BFGS inverse-Hessian update.
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
           (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    if (std::abs(f_old - res.f) <= opts.f_rel_tol * (std::abs(f_old) + 1e-12)) {
      res.converged = true;
      break;
    }
  }
  res.grad = g;
  if (!res.converged && g.lpNorm<Eigen::Infinity>() < opts.grad_tol) res.converged = true;
  return res;
}

}  // namespace cbmat
