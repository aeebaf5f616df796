#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cbmat/rng.hpp"
#include "cbmat/special.hpp"
#include "oracles.hpp"

using namespace cbmat;

TEST_CASE("normal cdf/quantile") {
  CHECK(norm_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(norm_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-6}) {
    CHECK(norm_cdf(norm_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  }
  CHECK(std::isinf(norm_quantile(0.0)));
  CHECK_THROWS_AS(norm_quantile(-0.1), std::domain_error);
}

TEST_CASE("incomplete gamma against quadrature") {
  for (double a : {0.5, 1.0, 2.5, 7.0}) {
    for (double x : {0.2, 1.0, 3.0, 9.0}) {
      // substitute t = s^2 to remove the t^{a-1} endpoint singularity
      const double want =
          oracles::integrate_1d(
              [a](double s) { return 2.0 * std::exp((2.0 * a - 1.0) * std::log(s) - s * s); },
              1e-12, std::sqrt(x), 256) /
          std::tgamma(a);
      CHECK(gamma_p(a, x) == doctest::Approx(want).epsilon(1e-8));
    }
  }
  // chi-square 0.95 quantile with 1 df (classic fixed point)
  CHECK(chi2_survival(3.841458820694124, 1.0) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(gamma_p_inv(2.5, gamma_p(2.5, 1.7)) == doctest::Approx(1.7).epsilon(1e-10));
  CHECK(gamma_p_inv(0.5, gamma_p(0.5, 0.03)) == doctest::Approx(0.03).epsilon(1e-9));
}

TEST_CASE("incomplete beta and student t") {
  // I_x(1,b) = 1-(1-x)^b exactly
  for (double b : {0.5, 2.0, 25.0})
    for (double x : {0.1, 0.4, 0.9})
      CHECK(inc_beta(1.0, b, x) ==
            doctest::Approx(1.0 - std::pow(1.0 - x, b)).epsilon(1e-12));
  CHECK(inc_beta_inv(2.0, 3.0, inc_beta(2.0, 3.0, 0.37)) ==
        doctest::Approx(0.37).epsilon(1e-10));

  CHECK(student_t_cdf(0.0, 3.0) == doctest::Approx(0.5));
  // t cdf from direct density quadrature
  for (double nu : {3.0, 12.0}) {
    for (double t : {-1.3, 0.4, 2.1}) {
      const double want =
          0.5 + oracles::integrate_1d([nu](double s) { return student_t_pdf(s, nu); }, 0.0,
                                      std::abs(t), 64) *
                    (t > 0 ? 1.0 : -1.0);
      CHECK(student_t_cdf(t, nu) == doctest::Approx(want).epsilon(1e-9));
    }
    for (double p : {0.025, 0.3, 0.8, 0.995})
      CHECK(student_t_cdf(student_t_quantile(p, nu), nu) == doctest::Approx(p).epsilon(1e-10));
  }
}

TEST_CASE("bivariate normal cdf") {
  // exact identity at the origin
  for (double rho : {-0.99, -0.6, 0.0, 0.3, 0.925, 0.99})
    CHECK(bvn_cdf(0.0, 0.0, rho) ==
          doctest::Approx(0.25 + std::asin(rho) / (2.0 * M_PI)).epsilon(1e-12));

  // quadrature oracle: integrate the conditional normal slice
  const auto oracle = [](double x, double y, double rho) {
    const double s = std::sqrt(1.0 - rho * rho);
    return oracles::integrate_1d(
        [&](double t) { return norm_pdf(t) * norm_cdf((y - rho * t) / s); }, -9.0, x, 200);
  };
  for (double rho : {-0.95, -0.4, 0.2, 0.8, 0.97}) {
    for (double x : {-1.5, 0.3, 2.0}) {
      for (double y : {-0.7, 1.1}) {
        CHECK(bvn_cdf(x, y, rho) == doctest::Approx(oracle(x, y, rho)).epsilon(1e-9));
      }
    }
  }
  CHECK(bvn_cdf(2.0, 3.0, 1.0) == doctest::Approx(norm_cdf(2.0)).epsilon(1e-14));
}

TEST_CASE("noncentral chi-square survival vs monte carlo") {
  Rng rng(99);
  const double df = 4.0, delta = 3.0, x = 9.0;
  long cnt = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double shift = (k == 0) ? std::sqrt(delta) : 0.0;
      const double z = rng.normal() + shift;
      s += z * z;
    }
    if (s > x) ++cnt;
  }
  CHECK(ncx2_survival(x, df, delta) ==
        doctest::Approx(static_cast<double>(cnt) / n).epsilon(0.02));
}

TEST_CASE("kendall tau") {
  CHECK(kendall_tau({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(kendall_tau({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // one discordant pair out of six
  CHECK(kendall_tau({1, 2, 3, 4}, {1, 2, 4, 3}) == doctest::Approx(4.0 / 6.0));
  // brute-force comparison on random data with ties
  Rng rng(3);
  std::vector<double> x(200), y(200);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::floor(rng.uniform() * 20);
    y[i] = std::floor(rng.uniform() * 20) + 0.3 * x[i];
  }
  long long conc = 0, disc = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double a = (x[i] - x[j]), b = (y[i] - y[j]);
      if (a == 0 && b == 0) continue;
      if (a == 0) ++tx;
      else if (b == 0) ++ty;
      else if (a * b > 0) ++conc;
      else ++disc;
    }
  }
  const double n0 = 200.0 * 199.0 / 2.0;
  const long long joint = static_cast<long long>(n0) - conc - disc - tx - ty;
  const double denom = std::sqrt((n0 - (tx + joint)) * (n0 - (ty + joint)));
  CHECK(kendall_tau(x, y) == doctest::Approx((conc - disc) / denom).epsilon(1e-12));
}

TEST_CASE("clopper-pearson") {
  const auto ci = clopper_pearson(24, 2000);
  // bounds satisfy the defining tail equations
  double lo_tail = 0.0;
  for (int k = 24; k <= 2000; ++k)
    lo_tail += std::exp(std::lgamma(2001.0) - std::lgamma(k + 1.0) - std::lgamma(2001.0 - k) +
                        k * std::log(ci.lower) + (2000.0 - k) * std::log1p(-ci.lower));
  CHECK(lo_tail == doctest::Approx(0.025).epsilon(1e-6));
  CHECK(clopper_pearson(0, 100).lower == 0.0);
  CHECK(clopper_pearson(100, 100).upper == 1.0);
  CHECK(clopper_pearson(0, 100).upper ==
        doctest::Approx(1.0 - std::pow(0.025, 1.0 / 100.0)).epsilon(1e-9));
}

TEST_CASE("uniformity of rng + ks pvalue sanity") {
  Rng rng(11);
  std::vector<double> u(20000);
  for (auto& v : u) v = rng.uniform();
  const double d = oracles::ks_statistic(u, [](double x) { return x; });
  CHECK(ks_pvalue(d, 20000) > 0.01);
  // normal() matches the normal cdf
  std::vector<double> z(20000);
  for (auto& v : z) v = rng.normal();
  const double dz = oracles::ks_statistic(z, [](double x) { return norm_cdf(x); });
  CHECK(ks_pvalue(dz, 20000) > 0.01);
}
