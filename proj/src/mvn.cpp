#include "cbmat/mvn.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cbmat/rng.hpp"
#include "cbmat/special.hpp"

namespace cbmat {

namespace {

double clamp01(double x) {
  constexpr double eps = 1e-16;
  return x < eps ? eps : (x > 1.0 - eps ? 1.0 - eps : x);
}

const double kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43,
                          47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101};

}  // namespace

Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& corr, bool* repaired) {
  if (repaired) *repaired = false;
  Eigen::MatrixXd sym = 0.5 * (corr + corr.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.eigenvalues().minCoeff() >= -1e-12) return sym;
  if (repaired) *repaired = true;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
  Eigen::MatrixXd fixed = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::VectorXd d = fixed.diagonal().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * fixed * d.asDiagonal();
}

MvnResult mvn_cdf(const Eigen::VectorXd& b, const Eigen::MatrixXd& corr, double abs_tol,
                  std::uint64_t seed) {
  const Eigen::Index d = b.size();
  if (corr.rows() != d || corr.cols() != d) throw std::invalid_argument("mvn_cdf: shape");
  MvnResult out;
  if (d == 0) {
    out.prob = 1.0;
    return out;
  }
  if (d == 1) {
    out.prob = norm_cdf(b[0]);
    return out;
  }
  Eigen::MatrixXd sigma = nearest_correlation(corr, &out.repaired);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    sigma += 1e-10 * Eigen::MatrixXd::Identity(d, d);
    llt.compute(sigma);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("mvn_cdf: Cholesky failed after repair");
    out.repaired = true;
  }
  if (d == 2) {
    out.prob = bvn_cdf(b[0], b[1], sigma(0, 1));
    return out;
  }
  const Eigen::MatrixXd L = llt.matrixL();

  const int ndim = static_cast<int>(d) - 1;
  if (ndim > static_cast<int>(sizeof(kPrimes) / sizeof(kPrimes[0])))
    throw std::invalid_argument("mvn_cdf: dimension above the lattice table (27)");
  std::vector<double> lattice(ndim);
  for (int j = 0; j < ndim; ++j) lattice[j] = std::sqrt(kPrimes[j]);

  const int n_shifts = 8;
  Rng rng(seed, 2024);
  std::vector<double> y(d);
  const double e0 = norm_cdf(b[0] / L(0, 0));  // first conditional is point-free

  const auto sample = [&](const std::vector<double>& w) -> double {
    double weight = e0;
    y[0] = norm_quantile(clamp01(w[0] * e0));
    for (Eigen::Index k = 1; k < d; ++k) {
      double num = b[k];
      for (Eigen::Index j = 0; j < k; ++j) num -= L(k, j) * y[j];
      const double e = norm_cdf(num / L(k, k));
      if (k + 1 < d) y[k] = norm_quantile(clamp01(w[k] * e));
      weight *= e;
      if (weight <= 0.0) return 0.0;
    }
    return weight;
  };

  // Extensible Weyl sequence: each round continues the previous points.
  const long max_points = 1L << 17;
  std::vector<double> shifts(static_cast<std::size_t>(n_shifts) * ndim);
  for (double& s : shifts) s = rng.uniform();
  std::vector<double> acc(n_shifts, 0.0);
  long done = 0;
  long target = 2048;

  std::vector<double> w(ndim), wa(ndim);
  for (;;) {
    for (int s = 0; s < n_shifts; ++s) {
      double local = 0.0;
      for (long i = done + 1; i <= target; ++i) {
        for (int j = 0; j < ndim; ++j) {
          const double v = i * lattice[j] + shifts[static_cast<std::size_t>(s) * ndim + j];
          const double f = v - std::floor(v);
          w[j] = f;
          wa[j] = 1.0 - f;
        }
        local += 0.5 * (sample(w) + sample(wa));
      }
      acc[s] += local;
    }
    done = target;
    double mean_of_means = 0.0, m2 = 0.0;
    for (int s = 0; s < n_shifts; ++s) {
      const double est = acc[s] / static_cast<double>(done);
      const double delta = est - mean_of_means;
      mean_of_means += delta / (s + 1);
      m2 += delta * (est - mean_of_means);
    }
    const double var = m2 / (n_shifts - 1);
    out.prob = std::min(1.0, std::max(0.0, mean_of_means));
    out.abs_error = 3.5 * std::sqrt(var / n_shifts);
    if (out.abs_error < abs_tol || done >= max_points) return out;
    target = done * 4;
  }
}

MvnResult mvn_cdf_equicoordinate(double z, const Eigen::MatrixXd& corr, double abs_tol,
                                 std::uint64_t seed) {
  return mvn_cdf(Eigen::VectorXd::Constant(corr.rows(), z), corr, abs_tol, seed);
}

}  // namespace cbmat
