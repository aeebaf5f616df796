#pragma once

// Test-only oracles, independent of the library implementation paths they
// check: tensor quadrature, finite differences, empirical-distribution
// statistics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

// Gauss-Legendre nodes/weights on (0,1).
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 1; i <= (n + 1) / 2; ++i) {
    double z = std::cos(M_PI * (i - 0.25) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    x[i - 1] = 0.5 * (1.0 - z);
    x[n - i] = 0.5 * (1.0 + z);
    w[i - 1] = 1.0 / ((1.0 - z * z) * pp * pp);
    w[n - i] = w[i - 1];
  }
}

/// Integral of f over [ax,bx] x [ay,by] on an nseg x nseg panel grid with
/// 16-point Gauss-Legendre per panel.
inline double integrate_2d(const std::function<double(double, double)>& f, double ax,
                           double bx, double ay, double by, int nseg = 16) {
  static std::vector<double> x, w;
  if (x.empty()) gauss_legendre(16, x, w);
  const double hx = (bx - ax) / nseg, hy = (by - ay) / nseg;
  double total = 0.0;
  for (int sx = 0; sx < nseg; ++sx) {
    for (int sy = 0; sy < nseg; ++sy) {
      const double x0 = ax + sx * hx, y0 = ay + sy * hy;
      double panel = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
          panel += w[i] * w[j] * f(x0 + hx * x[i], y0 + hy * x[j]);
      total += panel * hx * hy;
    }
  }
  return total;
}

inline double integrate_1d(const std::function<double(double)>& f, double a, double b,
                           int nseg = 64) {
  static std::vector<double> x, w;
  if (x.empty()) gauss_legendre(16, x, w);
  const double h = (b - a) / nseg;
  double total = 0.0;
  for (int s = 0; s < nseg; ++s) {
    const double x0 = a + s * h;
    double panel = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) panel += w[i] * f(x0 + h * x[i]);
    total += panel * h;
  }
  return total;
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Mixed second partial d^2 f / dx dy by the four-point stencil.
inline double mixed_diff(const std::function<double(double, double)>& f, double x, double y,
                         double h) {
  return (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) /
         (4.0 * h * h);
}

/// Second-order central Hessian entry of a scalar function of a vector.
inline double hessian_entry(const std::function<double(std::vector<double>)>& f,
                            std::vector<double> x, std::size_t i, std::size_t j, double h) {
  if (i == j) {
    const double f0 = f(x);
    auto xp = x;
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    return (fp - 2.0 * f0 + fm) / (h * h);
  }
  auto xx = x;
  xx[i] = x[i] + h;
  xx[j] = x[j] + h;
  const double fpp = f(xx);
  xx[j] = x[j] - h;
  const double fpm = f(xx);
  xx[i] = x[i] - h;
  xx[j] = x[j] + h;
  const double fmp = f(xx);
  xx[j] = x[j] - h;
  const double fmm = f(xx);
  return (fpp - fpm - fmp + fmm) / (4.0 * h * h);
}

/// Kolmogorov-Smirnov statistic of a sample against a CDF.
inline double ks_statistic(std::vector<double> sample,
                           const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double F = cdf(sample[i]);
    d = std::max(d, std::abs(F - (i + 1) / n));
    d = std::max(d, std::abs(F - i / n));
  }
  return d;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

}  // namespace oracles
